import numpy as np
import pytest

from dvar_lab.errors import ConfigError, NonFiniteError
from dvar_lab.optim import SAM, SGD, AdamW, OptimizerConfig, make_optimizer


def adam_reference(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    # textbook Adam, written out scalar by scalar
    theta = [float(x) for x in theta]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    out = []
    for k, g in enumerate(grads, 1):
        for i in range(len(theta)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1 ** k)
            vh = v[i] / (1 - b2 ** k)
            theta[i] -= lr * mh / (vh ** 0.5 + eps)
        out.append(list(theta))
    return out


def test_sgd_examples():
    assert SGD(0.1).step(np.array([1.0]), np.array([0.0])).tolist() == [1.0]
    assert SGD(0.1).step(np.array([1.0]), np.array([2.0]))[0] == pytest.approx(0.8, abs=1e-15)
    opt, v = SGD(0.5), np.array([1.0])
    for _ in range(2):
        v = opt.step(v, v)
    assert v.tolist() == [0.25]


def test_sgd_scale_law():
    # lr = 1/2 keeps every iterate exactly representable
    opt, v0 = SGD(0.5), np.array([1.0, -2.0, 0.5])
    v = v0.copy()
    for k in range(1, 40):
        v = opt.step(v, v)
        assert np.array_equal(v, (0.5 ** k) * v0)
    opt, v = SGD(0.3), v0.copy()
    for k in range(1, 40):
        v = opt.step(v, v)
        assert np.allclose(v, (0.7 ** k) * v0, rtol=1e-13, atol=0)


def test_sgd_momentum_pytorch_convention():
    opt, v = SGD(0.1, momentum=0.9), np.array([1.0])
    v = opt.step(v, np.array([1.0]))
    v = opt.step(v, np.array([1.0]))
    # buf = 1, then 0.9 + 1 = 1.9
    assert v[0] == pytest.approx(1.0 - 0.1 - 0.19, abs=1e-15)


def test_nonfinite_rejected_state_unchanged():
    for opt in (SGD(0.1, momentum=0.9), AdamW()):
        v = opt.step(np.ones(2), np.ones(2))
        before = (opt.step_count, getattr(opt, "buf", None), getattr(opt, "m", None))
        before = tuple(None if b is None else np.copy(b) for b in before)
        with pytest.raises(NonFiniteError):
            opt.step(v, np.array([np.nan, 1.0]))
        assert opt.step_count == before[0]
        for a, b in zip(before[1:], (getattr(opt, "buf", None), getattr(opt, "m", None))):
            assert (a is None and b is None) or np.array_equal(a, b)
    sam = SAM(0.1, rho=0.5)
    with pytest.raises(NonFiniteError):
        sam.step(np.ones(2), lambda u: np.array([np.inf, 0.0]))
    calls = iter([np.ones(2), np.array([np.nan, 0.0])])
    with pytest.raises(NonFiniteError):
        sam.step(np.ones(2), lambda u: next(calls))


def test_adamw_first_step_and_zero_grad():
    opt = AdamW(lr=0.01)
    g = np.array([3.0, -1e-3, 40.0])
    v = opt.step(np.zeros(3), g)
    assert np.allclose(np.abs(v), 0.01 * np.abs(g) / (np.abs(g) + 1e-8), rtol=1e-12)
    opt = AdamW(lr=0.01)
    v = np.array([1.0, 2.0])
    for _ in range(50):
        v = opt.step(v, np.zeros(2))
    assert v.tolist() == [1.0, 2.0]


def test_adamw_matches_adam_reference():
    rng = np.random.default_rng(0)
    A = np.diag(rng.uniform(0.5, 3.0, 5))
    theta = rng.standard_normal(5)
    theta0 = theta.copy()
    opt = AdamW(lr=0.05)
    grads, traj = [], []
    for _ in range(100):
        g = A @ theta
        grads.append(g.tolist())
        theta = opt.step(theta, g)
        traj.append(theta)
    ref = adam_reference(theta0, grads, 0.05)
    assert np.max(np.abs(np.array(traj) - np.array(ref))) <= 1e-12


def test_adamw_step_bound():
    rng = np.random.default_rng(1)
    for wd in (0.0, 0.01, 0.1):
        opt = AdamW(lr=0.01, weight_decay=wd)
        v = rng.standard_normal(6)
        for _ in range(300):
            new = opt.step(v, rng.standard_normal(6) * rng.uniform(0.01, 10))
            # bias correction can push the ratio m_hat/sqrt(v_hat) slightly past 1
            bound = 0.01 * (1 + wd * np.abs(v)) * 3.2
            assert np.all(np.abs(new - v) <= bound)
            v = new


def test_sam_examples():
    sam = SAM(lr=0.1, rho=0.5)
    v = sam.step(np.array([1.0]), lambda u: u)
    assert v[0] == pytest.approx(0.85, abs=1e-15)
    calls = []
    sam = SAM(lr=0.1, rho=0.05)
    sam.step(np.ones(3), lambda u: calls.append(1) or u)
    assert len(calls) == 2 and sam.grad_evals == 2
    calls.clear()
    v = sam.step(np.zeros(3), lambda u: calls.append(1) or np.zeros(3))
    assert v.tolist() == [0.0, 0.0, 0.0]


def test_sam_zero_rho_is_sgd():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    A = A @ A.T / 4 + np.eye(4)
    grad_fn = lambda u: A @ u + np.sin(u)  # noqa: E731
    sam, sgd = SAM(lr=0.05, rho=0.0, momentum=0.5), SGD(lr=0.05, momentum=0.5)
    a = b = rng.standard_normal(4)
    for _ in range(1000):
        a = sam.step(a, grad_fn)
        b = sgd.step(b, grad_fn(b))
        assert np.array_equal(a, b)


def test_deterministic():
    def run():
        opt = make_optimizer(OptimizerConfig("adamw", weight_decay=0.01))
        v = np.ones(3)
        rng = np.random.default_rng(5)
        for _ in range(20):
            v = opt.step(v, rng.standard_normal(3))
        return v
    assert np.array_equal(run(), run())


def test_config():
    assert OptimizerConfig("sgd").learning_rate == 1e-2
    assert OptimizerConfig().learning_rate == 5e-3
    assert OptimizerConfig("sam_sgd").learning_rate == 1e-2
    assert isinstance(make_optimizer(OptimizerConfig("sam_sgd", rho=0.1)), SAM)
    for bad in ({"kind": "lion"}, {"lr": 0.0}, {"rho": -1.0}, {"beta1": 1.0}, {"eps": float("nan")}):
        with pytest.raises(ConfigError):
            OptimizerConfig(**bad)
    with pytest.raises(ConfigError):
        OptimizerConfig.from_dict({"kind": "sgd", "nesterov": True})
