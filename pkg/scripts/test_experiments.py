"""Tests: experiments (assertions, rapporter, scenarier med reducerede parametre)."""
import json
import math
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import lattice_ops as LO
import experiments as EX

BOUND_STATE = LO.OperatorSpec(LO.zero_potential(), LO.table({0: -1.0}))
SMALL_IDENTITIES = {"instances": 3, "ks": [1, 10, 100], "green_sizes": [10, 50]}


def test_check_relations():
    assert EX.check("a", 1.0 + 1e-9, 1.0, 1e-8).passed
    assert not EX.check("a", 1.1, 1.0, 1e-8).passed
    assert EX.check("b", 0.5, 1.0, 0.0, "<=").passed
    assert EX.check("c", 2, 1, 0.0, ">=").passed
    assert not EX.check("d", 1.0, 1.0, 0.0, "<").passed
    assert EX.check("e", True, True, 0.0, "==").passed
    assert not EX.check("f", math.nan, 0.0, 1.0, "<=").passed
    assert not EX.check("g", None, 0.0, 1.0, "<=").passed
    with pytest.raises(ValueError):
        EX.check("h", 1.0, 1.0, 0.0, "~")


def test_soft_assertions_do_not_fail_report():
    rep = EX.RunReport("ldt", 0, {})
    rep.add(EX.check("hard_ok", 1.0, 1.0))
    rep.add(EX.check("soft_bad", 2.0, 1.0, hard=False))
    assert rep.passed
    rep.add(EX.check("hard_bad", 2.0, 1.0))
    assert not rep.passed


def test_report_dict_is_json_safe():
    rep = EX.RunReport("ldt", 3, {"parameters": {"x": np.float64(1.5)}, "operator": {}})
    rep.summary.update({"nan": math.nan, "inf": math.inf, "arr": np.arange(3), "flag": np.bool_(True)})
    d = rep.to_dict()
    assert d["summary"] == {"nan": None, "inf": "inf", "arr": [0, 1, 2], "flag": True}
    assert d["parameters"] == {"x": 1.5}
    json.dumps(d)


def test_merge_parameters():
    p = EX.merge_parameters("appendix", {"u0": 2.0})
    assert p["u0"] == 2.0 and p["delta"] == EX.CONFIG["appendix"]["delta"]
    p["match_range"].append(5)
    assert EX.CONFIG["appendix"]["match_range"] == [10, 1000]
    with pytest.raises(ValueError):
        EX.merge_parameters("appendix", {"nope": 1})


def test_appendix_example():
    rep = EX.run_appendix_example({"max_site": 10 ** 4, "match_horizon": 10 ** 5, "match_range": [10, 100]})
    results = {a.name: a for a in rep.assertions}
    assert rep.passed, [a for a in rep.assertions if not a.passed]
    assert results["sup_n2_V"].measured == pytest.approx(8.0 / 3.0, abs=1e-12)
    assert results["half_line_V1"].measured == 1.5
    assert results["gap_count_at_least_one"].measured >= 1
    assert rep.summary["l2_norm_squared"] == pytest.approx(math.pi ** 2 / 3.0 + 1.0)
    df = rep.tables["appendix_potential"]
    assert list(df.columns) == EX.CSV_COLUMNS["appendix_potential"]
    assert df.loc[df["n"] == 2, "V"].item() == pytest.approx(-2.0 / 3.0)


def test_identity_checks_pass():
    rep = EX.run_identity_checks(params=SMALL_IDENTITIES, seed=1)
    assert rep.passed, [a for a in rep.assertions if not a.passed]
    assert {a.name for a in rep.assertions} >= {"telescoping", "determinant_form", "cocycle_law", "inverse_law",
                                                 "green_cramer_vs_dense"}
    assert len(rep.tables["identities"]) == 3


def test_identity_checks_on_given_operator():
    op = LO.OperatorSpec(LO.almost_mathieu(2.0), LO.exponential(1.0, 0.5))
    rep = EX.run_identity_checks(op, params=SMALL_IDENTITIES, seed=2)
    assert rep.passed
    assert rep.config["operator"]["perturbation"]["kind"] == "exponential"


def test_same_seed_same_digest():
    a = EX.run_scenario(EX.Scenario("identities", None, dict(SMALL_IDENTITIES), (), 5))
    b = EX.run_scenario(EX.Scenario("identities", None, dict(SMALL_IDENTITIES), (), 5))
    assert a.timing and "wall_seconds" in a.timing
    assert EX.report_digest(a.to_dict()) == EX.report_digest(b.to_dict())
    c = EX.run_scenario(EX.Scenario("identities", None, dict(SMALL_IDENTITIES), (), 6))
    assert EX.report_digest(c.to_dict()) != EX.report_digest(a.to_dict())


def test_missing_expected_assertion_fails_run():
    rep = EX.run_scenario(EX.Scenario("identities", None, dict(SMALL_IDENTITIES), ("telescoping", "no_such"), 0))
    names = [a.name for a in rep.assertions]
    assert "missing:no_such" in names and "missing:telescoping" not in names
    assert not rep.passed


def test_unknown_scenario():
    with pytest.raises(ValueError):
        EX.run_scenario(EX.Scenario("nope", None))


def test_write_report(tmp_path):
    rep = EX.run_identity_checks(params=SMALL_IDENTITIES, seed=1)
    run_dir = EX.write_report(rep, str(tmp_path), gnuplot=True)
    assert os.path.basename(run_dir) == EX.run_dir_name(rep)
    assert os.path.basename(run_dir).startswith("identities-")
    with open(os.path.join(run_dir, "report.json"), encoding="utf-8") as f:
        data = json.load(f)
    EX.validate_report(data)
    assert data["passed"] and data["artifacts"] == ["identities.csv", "identities.dat"]
    df = pd.read_csv(os.path.join(run_dir, "identities.csv"))
    assert list(df.columns) == EX.CSV_COLUMNS["identities"]
    with open(os.path.join(run_dir, "identities.dat"), encoding="utf-8") as f:
        assert f.readline().startswith("# k ")


def test_validate_report_rejects_extra_keys():
    data = EX.RunReport("ldt", 0, {}).to_dict()
    EX.validate_report(data)
    data["extra"] = 1
    with pytest.raises(EX.ReportInvalid):
        EX.validate_report(data)


def test_gap_count_single_bound_state():
    params = {"E1": -2.5, "E2": -2.1, "boxes": [200, 400], "margin": 20, "horizon": 400}
    rep = EX.run_gap_count(BOUND_STATE, params)
    assert rep.passed, [a for a in rep.assertions if not a.passed]
    assert rep.summary["wronskian_count"] == 1
    assert rep.summary["box_counts"] == [1, 1]


def test_ids_scan_free_laplacian():
    rep = EX.run_ids_scan(LO.OperatorSpec(LO.zero_potential()), {"energies": 21, "box_size": 400})
    assert rep.passed
    curve = rep.tables["ids_curve"]
    assert curve["ids"].iloc[0] == 0.0 and curve["ids"].iloc[-1] == 1.0


def test_lyapunov_scan_supercritical():
    op = LO.OperatorSpec(LO.almost_mathieu(3.0))
    params = {"energies": 5, "k": 2000, "theta_grid": 64, "ids_box": 400, "ladder_E": 0.0,
              "expected": math.log(3.0)}
    rep = EX.run_lyapunov_scan(op, params)
    results = {a.name: a for a in rep.assertions}
    assert results["lyapunov_nonnegative"].passed
    assert results["lyapunov_expected"].passed
    assert list(rep.tables["lyapunov_ladder"]["k"]) == [250, 500, 1000, 2000]


def test_green_cramer_matches_banded():
    op = LO.OperatorSpec(LO.almost_mathieu(3.0), LO.exponential(1.0, 1.0))
    rep = EX.run_green(op, {"interval": [0, 59], "E": 0.123})
    assert rep.passed
    assert len(rep.tables["green"]) == 60


def test_ldt_assertions_are_soft():
    with pytest.raises(ValueError):
        EX.run_ldt_measurement(3.0, 0.0, 50, 0.1, 64)
    params = {"window_N": 8, "window_thetas": 4, "theta_grid": 16, "min_theta_samples": 64}
    rep = EX.run_ldt_measurement(3.0, 0.0, 50, 0.1, 64, params=params)
    assert rep.passed
    assert all(not a.hard for a in rep.assertions)
    assert list(rep.tables["ldt_fractions"]["N"]) == [50, 100, 200]
    assert {a.name: a for a in rep.assertions}["free_fraction_zero"].passed


def test_localization_reduced_box():
    params = {"interval": [-200, 199], "vectors": 5, "min_pass": 4, "lyapunov_k": 2000, "zero_control_tol": 0.2}
    rep = EX.run_localization_scenario(params=params)
    assert rep.passed, rep.tables["decay_fits"]
    assert rep.summary["control_passes"] < 4
    zero = {a.name: a for a in rep.assertions}["zero_perturbation_control"]
    assert zero.passed and zero.hard
    assert abs(rep.summary["passes_zero"] - rep.summary["passes"]) <= 1


if __name__ == "__main__":
    import tempfile
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(__import__("pathlib").Path(d))
            else:
                fn()
            print(f"  ✓ {name}")
    print("\nALLE ASSERTS OK ✓")
