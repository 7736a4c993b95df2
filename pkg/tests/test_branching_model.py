import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbrw import model_a, model_b, model_2d
from cbrw.branching_model import (
    AlphaRangeError, DuplicateCatalystError, OffspringLaw, OffspringLawError, model_from_config,
    model_to_config, pgf, pgf_complement, validate_model,
)


def test_presets():
    a, b, c = model_a(), model_b(), model_2d()
    assert a.betas[0] == 2.0 and a.means[0] == 2.0
    assert b.means[0] == pytest.approx(1.6)
    assert c.dimension == 2
    assert validate_model(b).valid


def test_offspring_errors():
    with pytest.raises(OffspringLawError):
        OffspringLaw((0.5, 0.4))
    with pytest.raises(OffspringLawError):
        OffspringLaw((1.2, -0.2))


def test_config_errors_name_catalyst():
    cfg = model_to_config(model_b())
    cfg["catalysts"][0]["offspring_pmf"] = [0.2, 0.0, 0.7]
    with pytest.raises(OffspringLawError, match="catalyst 0"):
        model_from_config(cfg)
    cfg = model_to_config(model_b())
    cfg["catalysts"].append(dict(cfg["catalysts"][0]))
    with pytest.raises(DuplicateCatalystError):
        model_from_config(cfg)
    cfg = model_to_config(model_b())
    cfg["catalysts"][0]["alpha"] = 1.0
    with pytest.raises(AlphaRangeError):
        model_from_config(cfg)


def test_round_trip():
    cfg = model_to_config(model_2d())
    assert model_to_config(model_from_config(cfg)) == cfg


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-300, 1.0))
def test_pgf_complement(w):
    law = OffspringLaw((0.2, 0.0, 0.8))
    exact = 1.6 * w - 0.8 * w * w
    assert pgf_complement(law, w) == pytest.approx(exact, rel=1e-12)
    if w > 1e-6:
        assert pgf_complement(law, w) == pytest.approx(1 - pgf(law, 1 - w), rel=1e-8)
