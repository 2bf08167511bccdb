import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from csbohm.errors import ConfigError, StructuralError
from csbohm.scenarios import (
    SCENARIOS,
    ScenarioConfig,
    ScenarioReport,
    apply_overrides,
    config_hash,
    default_config,
    parse_config_text,
    run_scenario,
)

pytestmark = pytest.mark.filterwarnings("ignore::csbohm.fields.BoundaryLeakWarning")


def base_doc():
    return default_config("retrocausal-velocity")


# --- configuration -------------------------------------------------------------------------

@pytest.mark.parametrize(
    "patch, message",
    [
        ({"scenario": "nope"}, "unknown scenario"),
        ({"grid": {"n_points": 100, "length": 10.0}}, "power of two"),
        ({"grid": {"n_points": 128, "length": -1.0}}, "positive"),
        ({"grid": {"length": 10.0}}, "n_points"),
        ({"window": {"t1": 1.0, "t2": 1.0, "dt": 0.1}}, "t1 < t2"),
        ({"window": {"t1": 0.0, "t2": 1.0, "dt": 0.3}}, "whole number"),
        ({"window": {"t1": 0.0, "t2": 1.0, "dt": 0.1, "stride": 3}}, "stride"),
        ({"ensemble": 0}, "ensemble"),
        ({"seed": -1}, "seed"),
        ({"initial": {"kind": "square"}}, "initial.kind"),
        ({"potential": {"kind": "quartic"}}, "potential.kind"),
        ({"colour": "blue"}, "unknown config keys"),
    ],
)
def test_config_validation_errors(patch, message):
    doc = {**base_doc(), **patch}
    with pytest.raises(ConfigError, match=message):
        ScenarioConfig.from_dict(doc)


def test_missing_required_key():
    doc = base_doc()
    del doc["window"]
    with pytest.raises(ConfigError, match="window"):
        ScenarioConfig.from_dict(doc)


def test_every_bundled_config_validates():
    for name in SCENARIOS:
        cfg = ScenarioConfig.from_dict(default_config(name))
        assert cfg.scenario == name
        assert ScenarioConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@given(st.permutations(list(default_config("epr-zigzag"))))
def test_config_hash_ignores_key_order(order):
    doc = default_config("epr-zigzag")
    shuffled = {k: doc[k] for k in order}
    assert config_hash(shuffled) == config_hash(doc)


def test_config_hash_changes_with_content():
    doc = base_doc()
    assert config_hash(doc) != config_hash(apply_overrides(doc, ["seed=1"]))


def test_overrides():
    doc = apply_overrides(base_doc(), ["grid.n_points=512", "initial.kind=gaussian", "params.new.deep=[1, 2]",
                                       "outputs.label=hello world"])
    assert doc["grid"]["n_points"] == 512
    assert doc["params"]["new"]["deep"] == [1, 2]
    assert doc["outputs"]["label"] == "hello world"
    assert base_doc()["grid"]["n_points"] == 2048
    with pytest.raises(ConfigError):
        apply_overrides(base_doc(), ["seed"])
    with pytest.raises(ConfigError):
        apply_overrides(base_doc(), ["seed.x=1"])


def test_parse_error_reports_line_and_column():
    with pytest.raises(ConfigError, match=r"line 2, column 8"):
        parse_config_text('{"a": 1,\n  "b": }', "cfg.json")


def test_report_rejects_foreign_and_repeated_assertions():
    rep = ScenarioReport("x", ("a", "b"))
    rep.check("a", True)
    with pytest.raises(StructuralError):
        rep.check("a", True)
    with pytest.raises(StructuralError):
        rep.check("c", True)
    assert not rep.complete and not rep.passed
    rep.check("b", True)
    assert rep.passed


# --- bundled scenarios ---------------------------------------------------------------------

@pytest.mark.parametrize("name", SCENARIOS)
def test_bundled_scenario_passes_its_contract(name, scenario_report):
    rep, out = scenario_report(name)
    failed = {k: v for k, v in rep.assertions.items() if not v["passed"]}
    assert rep.complete
    assert not failed, failed
    written = json.loads((out / "report.json").read_text())
    assert written["passed"] and written["config_hash"] == rep.config_hash
    for art in written["artifacts"]:
        assert (out / art).is_file()


def test_scenario_artifacts_are_byte_reproducible(tmp_path):
    cfg = ScenarioConfig.from_dict(base_doc())
    run_scenario(cfg, tmp_path / "a")
    run_scenario(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_product_state_gives_basis_independent_particle2_field():
    # With equal sum and difference widths the pair factorizes, so the choice of
    # M1 basis cannot change particle 2's field: the witness must collapse to zero.
    doc = apply_overrides(default_config("epr-zigzag"),
                          ["initial.width_sum=1.0", "initial.width_diff=1.0", "params.samples=2000",
                           "params.lines=0"])
    rep = run_scenario(ScenarioConfig.from_dict(doc))
    assert rep.assertions["pre_m1_fields_differ"]["value"] < 1e-10
    assert not rep.assertions["pre_m1_fields_differ"]["passed"]


def test_bad_scenario_parameters_raise_config_error():
    doc = apply_overrides(default_config("epr-zigzag"), ["params.t_star=5.0"])
    with pytest.raises(ConfigError):
        run_scenario(ScenarioConfig.from_dict(doc))
