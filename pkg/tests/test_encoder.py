"""Energy attention, memory energy, closed-form descent direction, dynamics."""

import numpy as np
import pytest

from hsiformer import autodiff as ad
from hsiformer import encoder as enc
from hsiformer import fourier_pos as fp
from hsiformer.autodiff import Tape, Tensor
from hsiformer.errors import ContractError, DivergenceError

from helpers import central_difference, rel_error


def make_params(rng, d_model=4, heads=1, **kw):
    return enc.init_encoder(rng, d_model, heads=heads, **kw)


def make_phase(d_head, tokens, rng=None, coeff_scale=0.0):
    params = fp.init_fope(d_head, max(tokens - 1, 1))
    if coeff_scale and rng is not None:
        params.coeffs = Tensor(rng.normal(size=params.coeffs.shape) * coeff_scale, requires_grad=True)
    return fp.build_phase(params, list(range(tokens - 1)))


# ---------------------------------------------------------------------------
# hand-evaluated score and energy cases


def test_scores_identity_projections_orthonormal_tokens():
    rng = np.random.default_rng(0)
    params = make_params(rng, d_model=4, heads=1)
    params.w_q = Tensor(np.eye(4)[None, :, :], requires_grad=True)
    params.w_k = Tensor(np.eye(4)[None, :, :], requires_grad=True)
    q_mat, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    g = Tensor(q_mat[:3])  # three orthonormal rows
    scores = enc.attention_scores(g, params, head=0).data
    np.testing.assert_allclose(scores, np.eye(3), atol=1e-12)


def two_token_params():
    rng = np.random.default_rng(1)
    params = make_params(rng, d_model=2, heads=1, beta=1.0)
    params.w_k = Tensor(np.array([[[1.0], [0.0]]]), requires_grad=True)
    params.w_q = Tensor(np.array([[[0.0], [1.0]]]), requires_grad=True)
    g = Tensor(np.array([[1.0, 3.0], [2.0, 4.0]]))  # K = [1, 2], Q = [3, 4]
    return params, g


def test_scores_two_token_hand_case():
    params, g = two_token_params()
    np.testing.assert_allclose(enc.attention_scores(g, params, head=0).data, [[3.0, 4.0], [6.0, 8.0]], atol=1e-14)


def test_scores_generally_nonsymmetric():
    rng = np.random.default_rng(2)
    params = make_params(rng, d_model=4, heads=1)
    g = Tensor(rng.normal(size=(5, 4)))
    a = enc.attention_scores(g, params, head=0).data
    assert np.linalg.norm(a - a.T) > 1e-6


def test_attention_energy_two_token_closed_form():
    params, g = two_token_params()
    total, per_head = enc.attention_energy(g, params)
    # columns reduce over the single off-diagonal entry: -(A_21 + A_12)
    assert total.item() == pytest.approx(-10.0, abs=1e-12)
    assert per_head.shape == (1,)


def test_attention_energy_uniform_scores():
    rng = np.random.default_rng(3)
    heads, tokens, beta = 2, 5, 0.7
    params = make_params(rng, d_model=4, heads=heads, beta=beta)
    params.w_q = Tensor(np.zeros((heads, 4, 2)), requires_grad=True)
    params.w_k = Tensor(np.zeros((heads, 4, 2)), requires_grad=True)
    g = Tensor(rng.normal(size=(tokens, 4)))
    total, _ = enc.attention_energy(g, params)
    expected = -(heads * tokens / beta) * np.log(tokens - 1)
    assert total.item() == pytest.approx(expected, abs=1e-10)


def test_attention_energy_single_token_rejected():
    rng = np.random.default_rng(4)
    params = make_params(rng, d_model=4, heads=1)
    with pytest.raises(ContractError):
        enc.attention_energy(Tensor(rng.normal(size=(1, 4))), params)


def test_large_beta_picks_column_max():
    rng = np.random.default_rng(5)
    beta = 1e3
    scores = rng.uniform(-1, 1, size=(6, 6))
    lse = ad.logsumexp(Tensor(scores * beta), axis=-2, exclude_diagonal=True).data / beta
    masked = scores.copy()
    np.fill_diagonal(masked, -np.inf)
    np.testing.assert_allclose(lse, masked.max(axis=0), atol=1e-2)


def test_hopfield_energy_hand_case():
    w_h = Tensor(np.array([[1.0], [-2.0], [3.0]]), requires_grad=True)
    g = Tensor(np.array([[1.0]]))  # projects to [1, -2, 3]
    assert enc.hopfield_energy(g, w_h).item() == pytest.approx(-5.0, abs=1e-14)


def test_hopfield_energy_zero_tokens_and_dead_zone():
    w_h = Tensor(np.array([[1.0], [2.0]]), requires_grad=True)
    assert enc.hopfield_energy(Tensor(np.zeros((3, 1))), w_h).item() == 0.0
    assert enc.hopfield_energy(Tensor(np.full((3, 1), -2.0)), w_h).item() == 0.0


def test_hopfield_energy_nonpositive():
    rng = np.random.default_rng(6)
    for _ in range(20):
        w_h = Tensor(rng.normal(size=(8, 4)))
        g = Tensor(rng.normal(size=(5, 4)) * rng.uniform(0.1, 10))
        assert enc.hopfield_energy(g, w_h).item() <= 0.0


# ---------------------------------------------------------------------------
# closed-form gradient vs finite differences (keystone)


def gradient_check_instance(rng, tokens, d_model, heads, with_phase, coeff_scale=0.0):
    params = make_params(rng, d_model=d_model, heads=heads)
    phase = make_phase(d_model // heads, tokens, rng, coeff_scale) if with_phase else None
    x_np = rng.normal(size=(tokens, d_model))
    analytic = enc.energy_gradient(Tensor(x_np), params, phase).data
    numeric = central_difference(lambda v: enc.total_energy(Tensor(v), params, phase)[0].item(), x_np)
    return rel_error(analytic, numeric)


def test_energy_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for trial in range(12):
        tokens = int(rng.integers(3, 9))
        d_model = int(rng.choice([4, 8]))
        heads = int(rng.choice([1, 2]))
        with_phase = bool(trial % 2)
        err = gradient_check_instance(rng, tokens, d_model, heads, with_phase, coeff_scale=0.3 if trial % 4 == 1 else 0.0)
        assert err < 1e-4, (trial, tokens, d_model, heads, with_phase, err)


def test_zero_tokens_hopfield_gradient_convention():
    # at x = 0 the normalized tokens hit relu exactly at 0; the convention
    # relu'(0) = 0 keeps the memory contribution out of the gradient
    rng = np.random.default_rng(8)
    params = make_params(rng, d_model=4, heads=1)
    params.eln_beta = Tensor(np.zeros(4), requires_grad=True)
    params.w_q = Tensor(np.zeros_like(params.w_q.data), requires_grad=True)
    params.w_k = Tensor(np.zeros_like(params.w_k.data), requires_grad=True)
    x = Tensor(np.zeros((3, 4)))
    grad = enc.energy_gradient(x, params).data
    np.testing.assert_array_equal(grad, np.zeros((3, 4)))


def test_sigma_columns_remain_distributions_when_beta_doubles():
    rng = np.random.default_rng(9)
    g = rng.normal(size=(5, 4))
    params = make_params(rng, d_model=4, heads=2)
    for beta in (params.beta, 2 * params.beta):
        q = np.matmul(g, params.w_q.data)
        k = np.matmul(g, params.w_k.data)
        scores = np.matmul(k, np.swapaxes(q, -1, -2))
        sigma = ad.softmax(Tensor(scores * beta), axis=-2, exclude_diagonal=True).data
        np.testing.assert_allclose(sigma.sum(axis=-2), np.ones((2, 5)), atol=1e-12)
    g1 = enc.energy_gradient(Tensor(g), params).data
    params.beta *= 2
    g2 = enc.energy_gradient(Tensor(g), params).data
    assert not np.allclose(g1, g2)


# ---------------------------------------------------------------------------
# descent dynamics


def test_zero_step_size_is_identity():
    rng = np.random.default_rng(10)
    params = make_params(rng, d_model=4, heads=2, alpha=0.0, steps=3)
    x0 = Tensor(rng.normal(size=(5, 4)))
    x_t, trace = enc.encoder_forward(x0, params)
    np.testing.assert_array_equal(x_t.data, x0.data)
    assert len(trace) == 4
    assert len(set(trace.total)) == 1


def test_single_step_equals_manual_update():
    rng = np.random.default_rng(11)
    params = make_params(rng, d_model=4, heads=1, alpha=0.05, steps=1)
    x0_np = np.random.default_rng(12).normal(size=(4, 4))
    x_t, _ = enc.encoder_forward(Tensor(x0_np), params)
    manual = Tensor(x0_np) - enc.energy_gradient(Tensor(x0_np), params) * 0.05
    np.testing.assert_array_equal(x_t.data, manual.data)


def test_energy_descent_at_small_step():
    rng = np.random.default_rng(13)
    for trial in range(10):
        tokens = int(rng.integers(3, 8))
        d_model = int(rng.choice([4, 8]))
        params = make_params(rng, d_model=d_model, heads=2, steps=8)
        x0 = Tensor(rng.normal(size=(tokens, d_model)))
        alpha = 1e-2
        for _ in range(30):
            params.alpha = alpha
            _, trace = enc.encoder_forward(x0, params)
            diffs = np.diff(trace.total)
            if np.all(diffs <= 1e-9):
                break
            alpha /= 2
        else:
            pytest.fail(f"no descent step size found for trial {trial}")


def test_permutation_equivariance_without_phases():
    rng = np.random.default_rng(14)
    for trial in range(5):
        tokens, d_model = 6, 4
        params = make_params(rng, d_model=d_model, heads=2, alpha=1e-3, steps=3)
        x0 = rng.normal(size=(tokens, d_model))
        perm = np.concatenate([[0], 1 + rng.permutation(tokens - 1)])
        out_a, trace_a = enc.encoder_forward(Tensor(x0), params)
        out_b, trace_b = enc.encoder_forward(Tensor(x0[perm]), params)
        np.testing.assert_allclose(out_a.data[perm], out_b.data, atol=1e-10)
        np.testing.assert_allclose(trace_a.total, trace_b.total, atol=1e-10)


def test_divergence_error_carries_step_and_alpha():
    rng = np.random.default_rng(15)
    params = make_params(rng, d_model=4, heads=1, alpha=0.1, steps=2)
    params.w_h = Tensor(np.full_like(params.w_h.data, 1e200), requires_grad=True)
    x0 = Tensor(rng.normal(size=(4, 4)))
    with pytest.raises(DivergenceError) as ei, np.errstate(over="ignore"):
        enc.encoder_forward(x0, params)
    assert ei.value.context["alpha"] == 0.1
    assert "step" in ei.value.context


def test_trace_csv_export(tmp_path):
    rng = np.random.default_rng(16)
    params = make_params(rng, d_model=4, heads=1, alpha=1e-3, steps=2)
    _, trace = enc.encoder_forward(Tensor(rng.normal(size=(4, 4))), params)
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,e_att,e_hopfield,e_total"
    assert len(lines) == 4
    for step, line in enumerate(lines[1:]):
        cells = line.split(",")
        assert int(cells[0]) == step
        assert float(cells[1]) + float(cells[2]) == pytest.approx(float(cells[3]), rel=1e-12)


# ---------------------------------------------------------------------------
# training through the unrolled dynamics


def test_loss_gradients_through_unrolled_forward():
    rng = np.random.default_rng(17)
    d_model, heads, tokens = 4, 1, 4
    target = rng.normal(size=(tokens, d_model))
    x0_np = rng.normal(size=(tokens, d_model))

    def fresh_params():
        return make_params(np.random.default_rng(18), d_model=d_model, heads=heads, alpha=0.05, steps=2)

    def loss_with(params):
        x_t, _ = enc.encoder_forward(Tensor(x0_np), params, want_trace=False)
        diff = x_t - Tensor(target)
        return ad.sum_(diff * diff)

    params = fresh_params()
    with Tape() as tape:
        loss = loss_with(params)
    tape.backward(loss)

    for name in ("w_q", "w_k", "w_h"):
        tensor = getattr(params, name)
        base = tensor.data.copy()

        def loss_at(values, _name=name):
            p = fresh_params()
            setattr(p, _name, Tensor(values, requires_grad=True))
            return loss_with(p).item()

        numeric = central_difference(loss_at, base)
        assert rel_error(tensor.grad, numeric) < 1e-4, name


def test_standard_block_shapes_and_gradients():
    rng = np.random.default_rng(19)
    d_model, heads, tokens = 4, 2, 5
    phase = make_phase(d_model // heads, tokens)
    params = enc.init_standard(np.random.default_rng(20), d_model, heads=heads, d_ff=8)
    x_np = rng.normal(size=(tokens, d_model))

    def loss_with(p, x):
        out = enc.standard_forward(x, p, phase)
        return ad.sum_(out * out)

    x = Tensor(x_np, requires_grad=True)
    with Tape() as tape:
        loss = loss_with(params, x)
    tape.backward(loss)
    assert params.w_v.grad is not None and np.any(params.w_v.grad != 0)
    numeric = central_difference(lambda v: loss_with(params, Tensor(v)).item(), x_np)
    assert rel_error(x.grad, numeric) < 1e-5
