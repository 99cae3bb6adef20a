import json

import pytest

from ksblowup.config import RunConfig
from ksblowup.errors import ValidationError


def test_round_trip_through_json():
    cfg = RunConfig.from_dict({"domain": {"shape": "rectangle", "width": 2.0, "height": 1.0},
                               "k": 1, "l": 1, "interior": [[1.0, 0.5]], "boundary_s": [0.7],
                               "epsilons": [0.05, 0.1], "weight": "1 + x1^2"})
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.epsilons == [0.1, 0.05]


def test_overrides_skip_none():
    cfg = RunConfig().with_overrides(beta=2.0, k=None)
    assert cfg.beta == 2.0 and cfg.k == 1


@pytest.mark.parametrize("changes", [
    {"beta": -1.0}, {"k": 0, "l": 0}, {"p": 1.3}, {"epsilons": [0.1, 0.1, 0.05]}, {"epsilons": [1.5]},
    {"weight": "x9"}, {"resolution": 2}, {"interior": [[0.1, 0.1], [0.2, 0.2]]},
    {"domain": {"shape": "triangle"}}, {"singular": [{"q": [0.0, 0.0], "n": 0}]},
])
def test_invalid_settings_raise(changes):
    with pytest.raises(ValidationError):
        RunConfig().with_overrides(**changes)


def test_unknown_keys_and_bad_json():
    with pytest.raises(ValidationError):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ValidationError):
        RunConfig.from_json("{not json")
    with pytest.raises(ValidationError):
        RunConfig.from_json(json.dumps([1, 2]))


def test_plan_reports_mass_number_and_points():
    plan = RunConfig(k=1, l=2).plan()
    assert plan["m"] == 4
    assert len(plan["points"]) == 3
    assert plan["violations"] == []


def test_singular_weight_needs_operator():
    cfg = RunConfig(singular=[{"q": [0.2, 0.1], "n": 1}])
    with pytest.raises(ValidationError):
        cfg.weight_function()
