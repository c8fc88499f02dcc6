import pytest
from hypothesis import given, strategies as st

from tailcode import boost
from tailcode.config import RunConfig, UsageError, format_config, parse_config_text, resolve


def test_parse_comments_and_blanks():
    text = "# run\nseed = 11\n\nscheme=binary  # inline\nfeature_selection = off\nsigma=0.25\n"
    assert parse_config_text(text) == {"seed": 11, "scheme": "binary", "feature_selection": False, "sigma": 0.25}


@pytest.mark.parametrize("text,msg", [
    ("seed 11", "expected key=value"),
    ("colour = red", "unknown key 'colour'"),
    ("seed = eleven", "seed"),
    ("two_query = maybe", "two_query"),
])
def test_parse_errors(text, msg):
    with pytest.raises(UsageError, match=msg):
        parse_config_text(text)


def test_precedence():
    cfg = resolve("seed = 3\nscheme = binary\n", {"seed": "9"})
    assert cfg.seed == 9 and cfg.scheme == "binary"
    assert resolve(None, {}).seed == RunConfig().seed


@pytest.mark.parametrize("override,msg", [
    ({"scheme": "gray"}, "scheme"), ({"preset": "huge"}, "preset"), ({"threads": "0"}, "threads"),
    ({"split": "dev"}, "split"), ({"schemes": "one_hot,gray"}, "schemes"),
    ({"two_query_grid": "on,sometimes"}, "two_query_grid"), ({"nope": "1"}, "nope"),
])
def test_validation_names_field(override, msg):
    with pytest.raises(UsageError, match=msg):
        resolve(None, override)


def test_generator_errors_are_usage():
    with pytest.raises(UsageError, match="relations_per_context"):
        resolve(None, {"relations_per_context": "40"}).generator_config()


def test_pipeline_config_mapping():
    cfg = resolve("preset = desk\nfeature_selection = no\nk_clusters = 4\n")
    pc = cfg.pipeline_config(scheme="one_hot")
    assert pc.boost == boost.PRESETS["desk"] and not pc.feature_selection
    assert pc.k_clusters == 4 and pc.scheme == "one_hot" and pc.dft.loss_kind == "focal"


@given(st.integers(0, 2**31), st.sampled_from(["one_hot", "binary", "hamming", "hybrid"]),
       st.booleans(), st.floats(0.01, 5.0))
def test_format_round_trip(seed, scheme, tq, sigma):
    cfg = resolve(None, {"seed": seed, "scheme": scheme, "two_query": tq, "sigma": sigma})
    assert resolve(format_config(cfg)) == cfg
