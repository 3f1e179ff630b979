import numpy as np
import pytest

from pcanet import tensor as T
from pcanet.backbone import BackboneConfig, extract_features, init_backbone
from pcanet.errors import ConfigError
from pcanet.tensor import DimensionError, Tensor


def test_default_feature_shape():
    cfg = BackboneConfig()
    assert cfg.feature_shape == (64, 8, 8)
    params = init_backbone(cfg, 0)
    with T.no_grad():
        out = extract_features(params, Tensor(np.zeros((2, 3, 64, 64))))
    assert out.shape == (2, 64, 8, 8)


def test_same_seed_identical_parameters():
    a, b = init_backbone(BackboneConfig(), 0), init_backbone(BackboneConfig(), 0)
    assert list(a) == list(b)
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes()
        assert a[name].requires_grad
    c = init_backbone(BackboneConfig(), 1)
    assert not np.array_equal(a["stage0.weight"].data, c["stage0.weight"].data)


def test_kaiming_std_within_20_percent():
    params = init_backbone(BackboneConfig(stage_channels=(16, 32, 64)), 3)
    c_in = 3
    for i, c_out in enumerate((16, 32, 64)):
        w = params[f"stage{i}.weight"].data
        assert w.size >= 432
        target = np.sqrt(2.0 / (c_in * 9))
        assert abs(w.std() / target - 1) < 0.2
        assert (params[f"stage{i}.bias"].data == 0).all()
        c_in = c_out


@pytest.mark.parametrize("kwargs", [
    {"input_size": 8, "stage_channels": (4, 4, 4)},
    {"input_size": 30, "stage_channels": (4, 4)},
    {"kernel_size": 2},
    {"stage_channels": ()},
    {"pool": "avg"},
])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        BackboneConfig(**kwargs)


def test_zero_image_zero_bias_gives_zero_features():
    params = init_backbone(BackboneConfig(), 0)
    out = extract_features(params, Tensor(np.zeros((1, 3, 64, 64))))
    assert not out.data.any()


def test_batch_independence(rng):
    params = init_backbone(BackboneConfig(), 0)
    x = rng.uniform(size=(2, 3, 64, 64)).astype(np.float32)
    with T.no_grad():
        both = extract_features(params, Tensor(x)).data
        one = extract_features(params, Tensor(x[:1])).data
        two = extract_features(params, Tensor(x[1:])).data
    np.testing.assert_array_equal(both, np.concatenate([one, two]))


def test_wrong_input_size():
    params = init_backbone(BackboneConfig(), 0)
    with pytest.raises(DimensionError):
        extract_features(params, Tensor(np.zeros((1, 3, 32, 32))))


def test_grad_check_every_parameter(rng):
    cfg = BackboneConfig(input_size=8, stage_channels=(3, 4), kernel_size=3)
    params = init_backbone(cfg, 0)
    names = list(params)
    x = Tensor(rng.uniform(size=(2, 3, 8, 8)))
    weight = Tensor(rng.standard_normal((2, 4, 2, 2)))

    def f(*tensors):
        p = type(params)(cfg, zip(names, tensors))
        return T.tsum(T.mul(extract_features(p, x), weight))
    assert T.grad_check(f, [params[n] for n in names]) < 1e-4
