import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpfm.dcfm import (LINEAR, TRIG, AdamW, DriftNet, RoleBatch, TrainConfig, TrainState,
                       get_schedule, grad, interpolate, load_checkpoint, loss_x, loss_y,
                       make_batch, save_checkpoint, time_embedding, train)
from cpfm.errors import DomainError, ParseError, ShapeMismatch, ValidationError
from cpfm.plan_ops import PlanSampler


def random_batch(rng, net, size=6, roles=None):
    role = rng.integers(0, 2, size) if roles is None else np.asarray(roles)
    return RoleBatch(
        rng.standard_normal((size, net.d_x)), rng.standard_normal((size, net.d_y)),
        rng.random(size), role,
        rng.standard_normal((size, net.d_x)), rng.standard_normal((size, net.d_y)),
    )


def fd_max_rel_error(net, batch, h=1e-5, floor=1e-6):
    _, g, _ = net.loss_and_grad(batch)
    worst = 0.0
    for name, p in net.params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = net.loss_and_grad(batch, with_grad=False)[0]
            p[idx] = old - h
            down = net.loss_and_grad(batch, with_grad=False)[0]
            p[idx] = old
            fd = (up - down) / (2 * h)
            rel = abs(fd - g[name][idx]) / max(abs(fd), abs(g[name][idx]), floor)
            worst = max(worst, rel)
    return worst


# -- schedules -------------------------------------------------------------

@pytest.mark.parametrize("sched", [LINEAR, TRIG])
def test_schedule_boundaries_and_derivatives(sched):
    assert (sched.a(0.0), sched.b(0.0)) == pytest.approx((1.0, 0.0))
    assert (sched.a(1.0), sched.b(1.0)) == pytest.approx((0.0, 1.0), abs=1e-15)
    t = np.linspace(0, 1, 101)
    h = 1e-6
    np.testing.assert_allclose(sched.a_dot(t), (sched.a(t + h) - sched.a(t - h)) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(sched.b_dot(t), (sched.b(t + h) - sched.b(t - h)) / (2 * h), atol=1e-6)


def test_linear_interpolation_examples():
    z0, z1 = np.array([1.0, -2.0]), np.array([3.0, 5.0])
    zt, vt = interpolate(LINEAR, z0, z1, 0.0)
    np.testing.assert_array_equal(zt, z0)
    np.testing.assert_array_equal(vt, z1 - z0)
    zt, vt = interpolate(LINEAR, z0, z1, 0.5)
    np.testing.assert_allclose(zt, 0.5 * (z0 + z1))
    np.testing.assert_allclose(vt, z1 - z0)


def test_trig_midpoint():
    zt, _ = interpolate(TRIG, np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5)
    np.testing.assert_allclose(zt, np.sqrt(2) / 2 * np.array([1.0, 1.0]))


def test_interpolation_errors():
    with pytest.raises(DomainError):
        interpolate(LINEAR, [0.0], [1.0], 1.5)
    with pytest.raises(ShapeMismatch):
        interpolate(LINEAR, [0.0], [1.0, 2.0], 0.5)
    with pytest.raises(ValidationError):
        get_schedule("cosine")


def test_batched_interpolation_per_row_times():
    rng = np.random.default_rng(0)
    z0, z1 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    t = np.array([0.0, 0.25, 0.5, 1.0])
    zt, vt = interpolate(LINEAR, z0, z1, t)
    for k in range(4):
        a, b = interpolate(LINEAR, z0[k], z1[k], t[k])
        np.testing.assert_allclose(zt[k], a)
        np.testing.assert_allclose(vt[k], b)


# -- network ---------------------------------------------------------------

def test_time_embedding_shape():
    e = time_embedding(np.array([0.0, 0.5]), 32)
    assert e.shape == (2, 32)
    np.testing.assert_array_equal(e[0, :16], 0.0)
    np.testing.assert_array_equal(e[0, 16:], 1.0)


def test_zero_parameters_give_zero_drift():
    net = DriftNet.create(3, 2, (8, 8))
    net.set_flat(np.zeros(net.n_params()))
    np.testing.assert_array_equal(net.forward(np.ones(3), np.ones(2), 0.3, 0), np.zeros(3))
    np.testing.assert_array_equal(net.forward(np.ones(3), np.ones(2), 0.3, 1), np.zeros(2))


def test_output_dimension_by_role():
    net = DriftNet.create(5, 2, (8,), seed=1)
    assert net.forward(np.zeros(5), np.zeros(2), 0.1, 0).shape == (5,)
    assert net.forward(np.zeros(5), np.zeros(2), 0.1, 1).shape == (2,)
    assert net.forward(np.zeros((4, 5)), np.zeros((4, 2)), np.full(4, 0.1), 1).shape == (4, 2)
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros(4), np.zeros(2), 0.1, 0)
    with pytest.raises(ValidationError):
        net.forward(np.zeros(5), np.zeros(2), 0.1, 2)


def test_forward_is_deterministic():
    net = DriftNet.create(3, 2, (16, 16), seed=4)
    x, y = np.array([0.1, -0.2, 0.3]), np.array([1.0, 2.0])
    a = net.forward(x, y, 0.7, 0)
    b = net.forward(x, y, 0.7, 0)
    assert a.tobytes() == b.tobytes()


def test_loss_examples():
    net = DriftNet.create(2, 2, (4,))
    net.set_flat(np.zeros(net.n_params()))
    assert loss_x(net, 0.5, np.zeros(2), np.zeros(2), np.zeros(2)) == 0.0
    assert loss_x(net, 0.5, np.zeros(2), np.zeros(2), -np.ones(2)) == 2.0
    assert loss_y(net, 0.5, np.zeros(2), np.zeros(2), np.array([3.0, 4.0])) == 25.0


def test_zero_residual_gives_zero_gradient():
    rng = np.random.default_rng(0)
    net = DriftNet.create(2, 3, (8, 8), seed=2)
    b = random_batch(rng, net)
    for role in (0, 1):
        sel = b.role == role
        out = net.forward(b.x_state[sel], b.y_state[sel], b.t[sel], role)
        (b.target_x if role == 0 else b.target_y)[sel] = out
    loss, g, _ = net.loss_and_grad(b)
    assert loss == 0.0
    assert all(not v.any() for v in g.values())


def test_linear_scalar_gradient_by_hand():
    # no hidden layers: u = [z, c, time features, role] @ Wx + bx
    net = DriftNet(1, 1, (), time_dim=2, role_dim=1)
    net.set_flat(np.zeros(net.n_params()))
    net.params["Wx"][0, 0] = 0.7
    z, v = 1.3, 0.2
    b = RoleBatch(np.array([[z]]), np.zeros((1, 1)), np.zeros(1), np.array([0]),
                  np.array([[v]]), np.zeros((1, 1)))
    g = grad(net, b)
    assert g["Wx"][0, 0] == pytest.approx(2 * (0.7 * z - v) * z)


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = DriftNet.create(3, 2, (16, 16), time_dim=4, role_dim=2, seed=seed)
    assert fd_max_rel_error(net, random_batch(rng, net, 5)) <= 1e-4


def test_role_masking_is_exact():
    rng = np.random.default_rng(5)
    net = DriftNet.create(3, 2, (8,), seed=5)
    g0 = grad(net, random_batch(rng, net, 6, roles=np.zeros(6, int)))
    assert not g0["Wy"].any() and not g0["by"].any() and not g0["role"][1].any()
    assert g0["Wx"].any()
    g1 = grad(net, random_batch(rng, net, 6, roles=np.ones(6, int)))
    assert not g1["Wx"].any() and not g1["bx"].any() and not g1["role"][0].any()
    assert g1["Wy"].any()


def test_make_batch_interpolates_active_side_only():
    x1, y1 = np.ones((2, 3)), 2 * np.ones((2, 2))
    x0, y0 = np.zeros((2, 3)), np.zeros((2, 2))
    b = make_batch(LINEAR, x1, y1, [0, 1], np.array([0.25, 0.5]), x0, y0)
    np.testing.assert_allclose(b.x_state, [[0.25] * 3, [1.0] * 3])
    np.testing.assert_allclose(b.y_state, [[2.0] * 2, [1.0] * 2])
    np.testing.assert_allclose(b.target_x[0], x1[0] - x0[0])
    np.testing.assert_allclose(b.target_y[1], y1[1] - y0[1])


# -- optimizer and training -----------------------------------------------

def test_adamw_first_step_magnitude():
    net = DriftNet.create(1, 1, (2,), seed=0)
    before = net.flat()
    g = {k: np.ones_like(v) for k, v in net.params.items()}
    cfg = TrainConfig(lr=1e-2, weight_decay=0.0)
    AdamW.for_net(net).update(net, g, cfg)
    # bias-corrected Adam moves every coordinate by lr on the first step
    np.testing.assert_allclose(before - net.flat(), 1e-2, rtol=1e-5)


def test_fixed_batch_memorization():
    rng = np.random.default_rng(0)
    net = DriftNet.create(2, 2, (32, 32), seed=0)
    x1, y1 = np.array([[1.0, -1.0]]), np.array([[0.5, 2.0]])
    size = 16
    role = rng.integers(0, 2, size)
    b = make_batch(LINEAR, np.repeat(x1, size, 0), np.repeat(y1, size, 0), role,
                   rng.random(size), rng.standard_normal((size, 2)), rng.standard_normal((size, 2)))
    cfg = TrainConfig(lr=1e-3, weight_decay=0.0)
    opt = AdamW.for_net(net)
    losses = []
    for _ in range(2000):
        loss, g, _ = net.loss_and_grad(b)
        losses.append(loss)
        opt.update(net, g, cfg)
    assert np.mean(losses[-50:]) <= 0.1 * np.mean(losses[:50])


def tiny_training(alpha=0.5, seed=0, epochs=2, weight_decay=1e-4):
    x = np.array([[-1.0], [1.0]])
    net = DriftNet.create(1, 1, (8,), seed=seed)
    cfg = TrainConfig(alpha=alpha, lr=1e-3, weight_decay=weight_decay, batch=16, epochs=epochs,
                      steps_per_epoch=5, seed=seed)
    state = TrainState.create(net, cfg)
    return train(state, PlanSampler(np.eye(2) / 2, seed), x, x.copy())


def test_training_is_deterministic():
    a, b = tiny_training(), tiny_training()
    assert a.net.flat().tobytes() == b.net.flat().tobytes()
    assert [r[:3] for r in a.history] == [r[:3] for r in b.history]
    assert len(a.history) == 2 and a.adamw.step == 10


def test_alpha_one_trains_only_the_y_head():
    init = DriftNet.create(1, 1, (8,), seed=0)
    # decoupled weight decay would shrink the x-head even with a zero gradient
    st_ = tiny_training(alpha=1.0, weight_decay=0.0)
    np.testing.assert_array_equal(st_.net.params["Wx"], init.params["Wx"])
    np.testing.assert_array_equal(st_.net.params["bx"], init.params["bx"])
    assert not np.array_equal(st_.net.params["Wy"], init.params["Wy"])
    assert all(np.isnan(r[1]) for r in st_.history)


def test_train_rejects_wrong_embedding_dim():
    net = DriftNet.create(1, 2, (4,))
    state = TrainState.create(net, TrainConfig(epochs=1))
    with pytest.raises(ShapeMismatch):
        train(state, PlanSampler(np.eye(2) / 2), np.zeros((2, 1)), np.zeros((2, 3)))


# -- checkpoints -----------------------------------------------------------

@given(st.integers(1, 4), st.integers(1, 3), st.lists(st.integers(1, 6), min_size=1, max_size=3),
       st.sampled_from(["linear", "trig"]))
def test_checkpoint_round_trip(tmp_path_factory, d_x, d_y, hidden, schedule):
    path = tmp_path_factory.mktemp("ck") / "m.ckpt"
    net = DriftNet.create(d_x, d_y, hidden, time_dim=6, role_dim=3, seed=d_x + d_y)
    save_checkpoint(path, net, schedule)
    back, sched = load_checkpoint(path)
    assert sched == schedule and back.hidden == tuple(hidden)
    assert back.flat().tobytes() == net.flat().tobytes()


def test_checkpoint_layout(tmp_path):
    net = DriftNet.create(2, 1, (3,), time_dim=4, role_dim=2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net)
    data = path.read_bytes()
    assert data[:4] == b"CPFM"
    assert np.frombuffer(data[4:32], "<u4").tolist() == [1, 2, 1, 4, 2, 0, 1]
    assert len(data) == 32 + 4 + 8 * net.n_params()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ParseError):
        load_checkpoint(p)
    net = DriftNet.create(1, 1, (2,))
    save_checkpoint(p, net)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ParseError):
        load_checkpoint(p)
