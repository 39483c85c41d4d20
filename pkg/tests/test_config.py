import pytest

from lenkbf.config import parse_config, parse_config_text, spec_with
from lenkbf.exceptions import ConfigError
from lenkbf.experiments import ExperimentSpec


def test_minimal_defaults():
    spec = parse_config_text("scenario = single\n")
    assert spec == ExperimentSpec(scenario="single")


def test_grid_and_comments():
    spec = parse_config_text(
        "# eps sweep\nscenario = eps   # alias\nepsilon = 0.003125, 0.00625\ndt = 1e-5\n"
    )
    assert spec.scenario == "eps-sweep"
    assert spec.epsilon == [0.003125, 0.00625]


def test_aliases_and_types():
    spec = parse_config_text("seed = 12\nM = 6\nnx = 40, 80\ninflation = no\nburn_in = auto\n")
    assert (spec.base_seed, spec.m, spec.n, spec.inflation, spec.burn_in) == (
        12, 6, [40, 80], False, None)


def test_negative_dt_names_field_and_line():
    with pytest.raises(ConfigError) as ei:
        parse_config_text("scenario = single\ndt = -1\n")
    assert ei.value.field == "dt"
    assert ei.value.line == 2
    assert "line 2" in str(ei.value)


@pytest.mark.parametrize("text,line", [
    ("bogus = 1\n", 1),
    ("m = 10\nm = 12\n", 2),
    ("\nepsilon = 0.1,,0.2\n", 2),
    ("steps = 2.5\n", 1),
    ("inflation = maybe\n", 1),
    ("just text\n", 1),
])
def test_parse_errors_have_lines(text, line):
    with pytest.raises(ConfigError) as ei:
        parse_config_text(text)
    assert ei.value.line == line


def test_unknown_key_lists_known():
    with pytest.raises(ConfigError, match="known:.*epsilon"):
        parse_config_text("epsilonn = 0.1\n")


def test_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("n = 12\ncomponent = 3\n", encoding="utf-8")
    assert parse_config(p).n == [12]
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.cfg")


def test_spec_with_revalidates():
    spec = ExperimentSpec()
    assert spec_with(spec, base_seed=3).base_seed == 3
    with pytest.raises(ConfigError):
        spec_with(spec, repeats=0)
