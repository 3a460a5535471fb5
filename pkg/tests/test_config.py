import json

import pytest

from statstab.config import RunConfig, a0_of, config_from_dict, load_config, offsets_of, parse_config
from statstab.errors import AlphaConstraintViolated, ParseError, SchemaError
from statstab.pipeline import InducingSetup
from statstab.stability import DensityBudget


def test_minimal_config_fills_defaults(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text('{"family": "chebyshev"}')
    cfg = load_config(p)
    assert cfg == RunConfig()
    assert cfg.inducing == InducingSetup()
    assert cfg.measure == DensityBudget()
    assert cfg.hyp.alpha == 0.01


def test_alpha_equal_to_lambda_rejected():
    with pytest.raises(AlphaConstraintViolated):
        parse_config('{"family": "chebyshev", "hypotheses": {"alpha": 0.3}}')


def test_unknown_key_named():
    with pytest.raises(SchemaError) as e:
        parse_config('{"family": "chebyshev", "fooo": 1}')
    assert "fooo" in str(e.value)
    with pytest.raises(SchemaError) as e:
        parse_config('{"inducing": {"fooo": 1}}')
    assert e.value.witness["field"] == "inducing.fooo"


def test_parse_error_has_position():
    with pytest.raises(ParseError) as e:
        parse_config('{"family":\n  chebyshev}')
    assert e.value.witness["line"] == 2


def test_type_errors():
    with pytest.raises(SchemaError):
        parse_config('{"seed": "zero"}')
    with pytest.raises(SchemaError):
        parse_config('{"inducing": {"N_max": 1.5}}')
    with pytest.raises(SchemaError):
        parse_config('{"inducing": {"rule": "nearest"}}')
    with pytest.raises(SchemaError):
        parse_config('{"family": "nope"}')
    with pytest.raises(SchemaError):
        parse_config('{"family": "quadratic", "params": {"b": 1}}')
    with pytest.raises(SchemaError):
        parse_config('{"seed": 1, "seed": 2}')


def test_ints_promote_to_floats():
    cfg = config_from_dict({"inducing": {"delta_star": 1}, "experiment": {"eps": 1}})
    assert isinstance(cfg.inducing.delta_star, float) and isinstance(cfg.experiment.eps, float)


def test_seed_and_r_max_propagate():
    cfg = config_from_dict({"seed": 7, "partition": {"r_max": 15}, "workers": 3})
    assert cfg.setup().seed == 7 and cfg.setup().r_max == 15
    assert cfg.budget().seed == 7 and cfg.budget().workers == 3


def test_experiment_helpers():
    cfg = config_from_dict({"family": "lorenz_singular", "params": {"a": 1.9}})
    assert a0_of(cfg) == 1.9
    assert len(offsets_of(cfg)) == 15
    cfg = config_from_dict({"family": "lorenz_singular", "experiment": {"offsets": [0, 0.01]}})
    assert offsets_of(cfg) == [0.0, 0.01]


def test_round_trip_through_json():
    cfg = config_from_dict({"family": "lorenz_singular", "seed": 3, "inducing": {"rule": "largest"}})
    again = config_from_dict(json.loads(json.dumps(cfg.to_json(), default=list)))
    assert again == cfg
