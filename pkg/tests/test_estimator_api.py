import pytest
from sklearn.base import clone

from lungct.config import TrainConfig
from lungct.models import LungSegmenter, NoduleClassifier, NoduleDetector

ESTIMATORS = [
    LungSegmenter(input_cube=32, filter_schedule=(8, 16)),
    NoduleDetector(input_size=64, width_mult=0.25),
    NoduleClassifier(projection_dim=16, encoder_blocks=2, attention_heads=2),
]


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_get_params_round_trips_through_clone(est):
    cloned = clone(est)
    assert type(cloned) is type(est)
    assert cloned.get_params() == est.get_params()


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_set_params_returns_self(est):
    assert est.set_params(random_state=99) is est
    assert est.get_params()["random_state"] == 99


def test_train_config_is_a_plain_param():
    train = TrainConfig(batch_size=2, learning_rate=1e-3, epochs=1)
    est = LungSegmenter(train=train)
    assert clone(est).get_params()["train"] == train


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_unfitted_predict_raises(est):
    with pytest.raises(RuntimeError, match="not fitted"):
        est.predict([])
