import numpy as np
import pytest

from crydetect.dsp import WINDOW_SAMPLES, mel_image
from crydetect.nn import (Adam, BatchNorm, CnnModel, Conv2d, Flatten, Linear, MaxPool2d, ReLU,
                          Tensor, TrainConfig, softmax, softmax_cross_entropy, train)

F64 = np.float64


def numeric_grad(f, arr, idx, h=1e-6):
    old = arr[idx]
    arr[idx] = old + h
    up = f()
    arr[idx] = old - h
    down = f()
    arr[idx] = old
    return (up - down) / (2 * h)


def check_layer(layer, x, n_probe=25, seed=0):
    """Compare analytic gradients of sum(g * layer(x)) against central differences."""
    rng = np.random.default_rng(seed)
    layer.training = True
    g = rng.standard_normal(layer.forward(x).shape)

    def loss():
        return float((layer.forward(x) * g).sum())

    layer.forward(x)
    dx = layer.backward(g)
    analytic = {"input": (x, dx)}
    for name, p in layer.params().items():
        analytic[name] = (p.value, p.grad.copy())
    for name, (arr, grad) in analytic.items():
        flat = [np.unravel_index(i, arr.shape) for i in rng.choice(arr.size, min(n_probe, arr.size), replace=False)]
        for idx in flat:
            num = numeric_grad(loss, arr, idx)
            denom = max(abs(num), abs(grad[idx]), 1e-8)
            assert abs(num - grad[idx]) / denom < 1e-4 or abs(num - grad[idx]) < 1e-7, (name, idx, num, grad[idx])


def test_linear_gradients():
    rng = np.random.default_rng(1)
    check_layer(Linear(7, 5, rng=rng, dtype=F64), rng.standard_normal((4, 7)))


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (4, 0)])
def test_conv_gradients(stride, padding):
    rng = np.random.default_rng(2)
    layer = Conv2d(2, 3, 3, stride=stride, padding=padding, rng=rng, dtype=F64)
    check_layer(layer, rng.standard_normal((2, 2, 9, 9)))


def test_conv_forward_matches_direct_sum():
    rng = np.random.default_rng(3)
    layer = Conv2d(2, 3, 3, stride=2, padding=1, rng=rng, dtype=F64)
    x = rng.standard_normal((1, 2, 7, 7))
    out = layer.forward(x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    w, b = layer.weight.value, layer.bias.value
    for o in range(3):
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                ref = (xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
                assert out[0, o, i, j] == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("shape", [(6, 4), (3, 2, 4, 4)])
def test_batchnorm_gradients(shape):
    rng = np.random.default_rng(4)
    layer = BatchNorm(shape[1], dtype=F64)
    layer.gamma.value[...] = rng.uniform(0.5, 2, shape[1])
    layer.beta.value[...] = rng.standard_normal(shape[1])
    check_layer(layer, rng.standard_normal(shape) * 3 + 1)


def test_relu_gradients():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 8))
    x[np.abs(x) < 0.05] = 0.5
    check_layer(ReLU(), x)


def test_maxpool_gradients():
    rng = np.random.default_rng(6)
    x = rng.permutation(2 * 2 * 9 * 9).reshape(2, 2, 9, 9).astype(F64) * 0.01
    check_layer(MaxPool2d(3, 2), x)


def test_maxpool_forward_direct():
    x = np.random.default_rng(7).standard_normal((1, 1, 7, 7))
    out = MaxPool2d(3, 2).forward(x)
    assert out.shape == (1, 1, 3, 3)
    assert out[0, 0, 1, 2] == x[0, 0, 2:5, 4:7].max()


def test_flatten_round_trip():
    layer = Flatten()
    layer.training = True
    x = np.arange(24.0).reshape(2, 3, 2, 2)
    assert layer.forward(x).shape == (2, 12)
    np.testing.assert_array_equal(layer.backward(np.ones((2, 12))), np.ones_like(x))


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((5, 2))
    labels = rng.integers(0, 2, 5)
    _, grad = softmax_cross_entropy(logits, labels)
    for idx in np.ndindex(logits.shape):
        num = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits, idx)
        assert num == pytest.approx(grad[idx], rel=1e-5, abs=1e-9)


def test_softmax_values():
    np.testing.assert_allclose(softmax(np.array([0.0, np.log(3.0)])), [0.25, 0.75])
    np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])


def test_batchnorm_training_statistics():
    rng = np.random.default_rng(9)
    layer = BatchNorm(4, dtype=F64)
    layer.training = True
    x = rng.standard_normal((64, 4)) * 5 + 3
    layer.forward(x)
    xh = layer.last_normalized
    np.testing.assert_allclose(xh.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(xh.std(axis=0), 1, rtol=1e-3)
    np.testing.assert_allclose(layer.running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(layer.running_var, 0.9 + 0.1 * x.var(axis=0))


def test_batchnorm_eval_uses_running_stats():
    layer = BatchNorm(2, dtype=F64)
    layer.running_mean[...] = [1.0, -1.0]
    layer.running_var[...] = [4.0, 1.0]
    layer.training = False
    out = layer.forward(np.array([[3.0, 0.0]]))
    np.testing.assert_allclose(out, [[2 / np.sqrt(4 + 1e-5), 1 / np.sqrt(1 + 1e-5)]])


def test_adam_first_step():
    p = Tensor(np.array([1.0, -2.0, 0.5]))
    p.grad = np.array([0.3, -4.0, 0.0])
    Adam([p], lr=0.01).step()
    # bias correction makes the first step lr * sign(g) (up to eps)
    np.testing.assert_allclose(p.value, [0.99, -1.99, 0.5], atol=1e-7)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(10)
    p = Tensor(rng.standard_normal(4))
    ref = p.value.copy()
    m = v = np.zeros(4)
    opt = Adam([p], lr=0.05)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        p.grad = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.value, ref, rtol=1e-12)


@pytest.fixture(scope="module")
def desk():
    return CnnModel(preset="desk", seed=0)


def images(n, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 225, 225)).astype(np.float32)


def test_forward_shape(desk):
    out = desk.forward(images(3))
    assert out.shape == (3, 2) and np.all(np.isfinite(out))


def test_full_preset_flatten_size():
    model = CnnModel(seed=0)
    assert model.arch.widths == (96, 256, 384, 384, 256, 4096)
    flat = model._run(model._as_batch(images(1)), stop=19)
    assert flat.shape == (1, 6400)
    assert model.layers[19].in_features == 6400
    assert model.layers[22].out_features == 1000


def test_deep_features(desk):
    f = desk.deep_features(images(2))
    assert f.shape == (2, 1000)
    assert np.all(f >= 0)


def test_predict_tie_goes_to_not_crying(desk):
    model = CnnModel(preset="desk", seed=1)
    last = model.layers[-1]
    last.weight.value[...] = 0
    last.bias.value[...] = 0
    label, probs = model.predict(images(1)[0])
    assert label == "not_crying"
    np.testing.assert_allclose(probs, [0.5, 0.5])
    last.bias.value[...] = [0.0, 1.0]
    assert model.predict(images(1)[0])[0] == "crying"


def test_inference_refuses_train_mode():
    model = CnnModel(preset="desk", seed=0).set_mode("train")
    with pytest.raises(RuntimeError):
        model.predict(images(1)[0])
    with pytest.raises(RuntimeError):
        model.deep_features(images(1))


def test_bad_input_shape(desk):
    with pytest.raises(ValueError):
        desk.forward(np.zeros((1, 224, 225)))


def test_serialization_bit_exact(tmp_path, desk):
    x = images(2, seed=3)
    desk.save(tmp_path / "m")
    back = CnnModel.load(tmp_path / "m")
    assert desk.forward(x).tobytes() == back.forward(x).tobytes()
    assert desk.deep_features(x).tobytes() == back.deep_features(x).tobytes()


def test_seeded_init_deterministic():
    a, b = CnnModel(preset="desk", seed=5), CnnModel(preset="desk", seed=5)
    c = CnnModel(preset="desk", seed=6)
    assert all(p.value.tobytes() == q.value.tobytes() for p, q in zip(a.parameters(), b.parameters()))
    assert any(p.value.tobytes() != q.value.tobytes() for p, q in zip(a.parameters(), c.parameters()))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_loss_decreases_on_small_batch():
    model = CnnModel(preset="desk", seed=0)
    x = images(16, seed=4)
    y = np.array([0, 1] * 8)
    hist = train(model, x, y, TrainConfig(epochs=8, batch_size=16, learning_rate=1e-3))
    assert hist[-1] < hist[0]
    assert model.mode == "eval"


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train(CnnModel(preset="desk"), np.zeros((0, 225, 225)), [], TrainConfig(epochs=1))


def mel_set(n, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(WINDOW_SAMPLES) / 22050
    xs, ys = [], []
    for i in range(n):
        noise = rng.standard_normal(WINDOW_SAMPLES) * 0.05
        if i % 2:
            f0 = rng.uniform(420, 520)
            noise = noise + 0.3 * sum(np.sin(2 * np.pi * f0 * k * t) / k for k in range(1, 6))
        xs.append(mel_image(noise).values)
        ys.append(i % 2)
    return np.array(xs, dtype=np.float32), np.array(ys)


def test_desk_net_fits_fifty_windows():
    x, y = mel_set(50, 0)
    model = CnnModel(preset="desk", seed=0)
    train(model, x, y, TrainConfig(epochs=6, batch_size=10))
    pred = model.predict_proba(x).argmax(axis=1)
    assert np.array_equal(pred, y)


def test_training_is_deterministic():
    x, y = mel_set(12, 1)
    runs = []
    for _ in range(2):
        model = CnnModel(preset="desk", seed=2)
        hist = train(model, x, y, TrainConfig(epochs=2, batch_size=4, rng_seed=9))
        runs.append((hist, model.forward(x).tobytes()))
    assert runs[0] == runs[1]
