"""Loss terms checked against closed forms and direct-computation oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import micro_net
from fpdeblur.networks import (
    GeneratorOutputs,
    NetConfig,
    init_params,
    ridge_extractor_forward,
    verifier_features,
)
from fpdeblur.objective import (
    ABLATION_FLAGS,
    LossError,
    LossWeights,
    adversarial_losses,
    contrastive_loss,
    downsample_target,
    enabled_terms,
    normalize_flags,
    reconstruction_loss,
    ridge_loss,
    total_generator_loss,
    verifier_feature_loss,
    weighted_total,
)

LN2 = math.log(2.0)
finite = st.floats(0.0, 10.0, allow_nan=False)


def _img(size, seed, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(2, 1, size, size, generator=g, dtype=dtype)


# ---------------------------------------------------------------- weights

def test_loss_weight_defaults():
    w = LossWeights()
    assert (w.lambda_rec, w.lambda_ridge, w.lambda_verif) == (100.0, 5.0, 0.01)


@pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
def test_loss_weights_reject_invalid(bad):
    with pytest.raises(LossError):
        LossWeights(lambda_rec=bad)


# ---------------------------------------------------------------- adversarial

def test_adversarial_zero_logits_closed_form():
    z = [torch.zeros(1, 1, s, s) for s in (2, 6, 14)]
    g, d = adversarial_losses(z, z)
    for gi, di in zip(g, d):
        assert abs(float(gi) - LN2) < 1e-6
        assert abs(float(di) - 2 * LN2) < 1e-6


def test_adversarial_confident_discriminator():
    real = [torch.full((1, 1, 4, 4), 20.0, dtype=torch.float64)] * 3
    fake = [torch.full((1, 1, 4, 4), -20.0, dtype=torch.float64)] * 3
    g, d = adversarial_losses(real, fake)
    for gi, di in zip(g, d):
        assert float(di) < 1e-8
        assert abs(float(gi) - (20.0 + math.log1p(math.exp(-20.0)))) < 1e-9


def test_adversarial_matches_bce_oracle_and_patch_permutation(rng):
    real = torch.from_numpy(rng.normal(size=(2, 1, 5, 5)))
    fake = torch.from_numpy(rng.normal(size=(2, 1, 5, 5)))
    sig = lambda t: 1 / (1 + np.exp(-t.numpy()))  # noqa: E731
    d_oracle = -np.mean(np.log(sig(real))) - np.mean(np.log(1 - sig(fake)))
    g_oracle = -np.mean(np.log(sig(fake)))
    g, d = adversarial_losses([real], [fake])
    assert abs(float(d[0]) - d_oracle) < 1e-9 and abs(float(g[0]) - g_oracle) < 1e-9
    perm = torch.from_numpy(rng.permutation(50))
    shuffle = lambda t: t.flatten()[perm].reshape(t.shape)  # noqa: E731
    g2, d2 = adversarial_losses([shuffle(real)], [shuffle(fake)])
    assert abs(float(g2[0]) - float(g[0])) < 1e-12 and abs(float(d2[0]) - float(d[0])) < 1e-12


def test_adversarial_errors():
    with pytest.raises(LossError):
        adversarial_losses([torch.tensor([[float("nan")]])], [torch.zeros(1, 1)])
    with pytest.raises(LossError):
        adversarial_losses([torch.zeros(1, 1, 2, 2)], [torch.zeros(1, 1, 3, 3)])


def test_absent_scale_passes_through():
    g, d = adversarial_losses([None, None, torch.zeros(1, 1, 2, 2)], [None, None, torch.zeros(1, 1, 2, 2)])
    assert g[0] is None and d[1] is None and abs(float(g[2]) - LN2) < 1e-6


# ---------------------------------------------------------------- reconstruction

def _outputs(q, h, f):
    return GeneratorOutputs(q, h, f)


def test_reconstruction_exact_targets_zero():
    y = _img(16, 0)
    out = _outputs(F.avg_pool2d(y, 4), F.avg_pool2d(y, 2), y.clone())
    assert [float(t) for t in reconstruction_loss(out, y)] == [0.0, 0.0, 0.0]


def test_reconstruction_ones_vs_zeros():
    y = torch.ones(1, 1, 16, 16)
    out = _outputs(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 16, 16))
    assert [float(t) for t in reconstruction_loss(out, y)] == [1.0, 1.0, 1.0]


def test_reconstruction_summation_oracle(rng):
    y = rng.random((1, 1, 16, 16))
    outs = [rng.random((1, 1, s, s)) for s in (4, 8, 16)]

    def pool(a, f):
        n = a.shape[-1] // f
        return a.reshape(1, 1, n, f, n, f).mean(axis=(3, 5))

    expect = [np.abs(o - pool(y, f)).sum() / o.size for o, f in zip(outs, (4, 2, 1))]
    got = reconstruction_loss(_outputs(*[torch.from_numpy(o) for o in outs]), torch.from_numpy(y))
    for e, g in zip(expect, got):
        assert abs(float(g) - e) < 1e-9


def test_reconstruction_shape_mismatch():
    with pytest.raises(LossError):
        reconstruction_loss(_outputs(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8)),
                            torch.zeros(1, 1, 16, 16))


def test_downsample_examples():
    c = torch.full((1, 1, 8, 8), 0.37, dtype=torch.float64)
    assert torch.allclose(downsample_target(c, 4), torch.full((1, 1, 2, 2), 0.37, dtype=torch.float64))
    checker = torch.tensor([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], dtype=torch.float64)
    assert torch.equal(downsample_target(checker.view(1, 1, 4, 4), 2), torch.full((1, 1, 2, 2), 0.5, dtype=torch.float64))
    with pytest.raises(LossError):
        downsample_target(torch.zeros(1, 1, 6, 6), 4)
    with pytest.raises(LossError):
        downsample_target(torch.zeros(1, 1, 8, 8), 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4]))
def test_downsample_stays_in_unit_range(seed, f):
    y = torch.rand(1, 1, 8, 8, generator=torch.Generator().manual_seed(seed))
    d = downsample_target(y, f)
    assert float(d.min()) >= 0 and float(d.max()) <= 1
    assert abs(float(d.mean()) - float(y.mean())) < 1e-6


# ---------------------------------------------------------------- ridge and verifier terms

def test_ridge_loss_zero_for_identical_and_composition_oracle():
    r = init_params("ridge_extractor", micro_net(), seed=1, dtype=torch.float64)
    y, g = _img(8, 1), _img(8, 2)
    assert float(ridge_loss(r, y, y.clone())) == 0.0
    with torch.no_grad():
        oracle = (ridge_extractor_forward(r, y) - ridge_extractor_forward(r, g)).abs().numpy().mean()
    assert abs(float(ridge_loss(r, y, g)) - oracle) < 1e-9
    assert float(ridge_loss(r, y, g)) >= 0


def _n1_verifier():
    cfg = NetConfig(base_resolution=8, base_channels=2, unet_depth=2, max_channels=4, verifier_blocks=1,
                    verifier_channels=2, blocks_per_stage=1, embedding_dim=4, disc_channels=2)
    return init_params("verifier", cfg, seed=4, dtype=torch.float64)


def test_verifier_loss_n1_oracle():
    v = _n1_verifier()
    y, g = _img(8, 3), _img(8, 4)
    with torch.no_grad():
        fy = verifier_features(v, y).stage_features[0].numpy()
        fg = verifier_features(v, g).stage_features[0].numpy()
    oracle = ((fy - fg) ** 2).sum() / fy.size
    assert abs(float(verifier_feature_loss(v, y, g)) - oracle) < 1e-9
    assert float(verifier_feature_loss(v, y, y.clone())) == 0.0


def test_verifier_loss_sums_stages():
    v = init_params("verifier", micro_net(), seed=5, dtype=torch.float64)
    y, g = _img(8, 5), _img(8, 6)
    with torch.no_grad():
        fy, fg = verifier_features(v, y), verifier_features(v, g)
    oracle = sum(float(((a - b) ** 2).mean()) for a, b in zip(fy.stage_features, fg.stage_features))
    assert len(fy.stage_features) == 4
    assert abs(float(verifier_feature_loss(v, y, g)) - oracle) < 1e-12
    emb = float(((fy.embedding - fg.embedding) ** 2).mean())
    assert abs(float(verifier_feature_loss(v, y, g, stages=False)) - emb) < 1e-12


def test_squared_difference_is_quadratic():
    # the feature term is a mean squared difference: doubling the difference quadruples it
    a = torch.randn(3, 4, 5, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    b = torch.randn(3, 4, 5, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    one = ((a - b) ** 2).mean()
    two = ((a - (a + 2 * (b - a))) ** 2).mean()
    assert abs(float(two) - 4 * float(one)) < 1e-12


def test_frozen_helpers_receive_no_gradient():
    r = init_params("ridge_extractor", micro_net(), seed=0, dtype=torch.float64).requires_grad_(True)
    v = init_params("verifier", micro_net(), seed=0, dtype=torch.float64).requires_grad_(True)
    y = _img(8, 7)
    g = _img(8, 8).requires_grad_(True)
    (ridge_loss(r, y, g) + verifier_feature_loss(v, y, g)).backward()
    assert all(t.grad is None for t in r.tensors.values())
    assert all(t.grad is None for t in v.tensors.values())
    assert g.grad is not None and float(g.grad.abs().sum()) > 0


def test_shape_mismatch_errors():
    r = init_params("ridge_extractor", micro_net(), seed=0)
    with pytest.raises(LossError):
        ridge_loss(r, torch.zeros(1, 1, 8, 8), torch.zeros(2, 1, 8, 8))


# ---------------------------------------------------------------- contrastive

def test_contrastive_examples():
    assert contrastive_loss(0.0, True) == 0.0
    assert contrastive_loss(1.0, False, margin=1.0) == 0.0
    assert contrastive_loss(0.0, False, margin=2.0) == 4.0
    assert abs(contrastive_loss(0.3, True, margin=1.0) - 0.09) < 1e-15
    with pytest.raises(LossError):
        contrastive_loss(-0.1, True)
    with pytest.raises(LossError):
        contrastive_loss(0.1, True, margin=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 3), st.booleans()), min_size=1, max_size=8), st.floats(0.1, 2.0))
def test_contrastive_tensor_matches_scalar(pairs, margin):
    d = torch.tensor([p[0] for p in pairs], dtype=torch.float64)
    same = [p[1] for p in pairs]
    expect = np.mean([contrastive_loss(float(x), s, margin) for x, s in zip(d, same)])
    assert abs(float(contrastive_loss(d, same, margin)) - expect) < 1e-12
    assert float(contrastive_loss(d, same, margin)) >= 0


# ---------------------------------------------------------------- total and ablations

def test_total_example():
    rep = total_generator_loss([LN2] * 3, [0.1] * 3, 0.2, 4.0)
    assert abs(rep.total - (3 * LN2 + 31.04)) < 1e-12
    assert set(rep.active_terms) == {"adv_quarter", "adv_half", "adv_full", "rec_quarter", "rec_half",
                                     "rec_full", "ridge", "verif"}


def test_plain_cgan_reduces_to_adv_plus_l1():
    rep = total_generator_loss([0.5, 0.6, 0.7], [0.1, 0.2, 0.3], 0.9, 9.0, ablation_flags=["plain_cgan"])
    assert rep.active_terms == ["adv_full", "rec_full"]
    assert abs(rep.total - (0.7 + 100 * 0.3)) < 1e-12


TABLE_FLAGS = {
    "plain": ["plain_cgan"],
    "no_verifier": ["no_verifier"],
    "no_ridge": ["no_ridge"],
    "no_intermediate": ["no_verifier_intermediate"],
    "single": ["single_discriminator"],
    "full": [],
}


def test_active_terms_audit_per_variant():
    expect = {
        "plain": ("adv_full", "rec_full"),
        "no_verifier": ("adv_quarter", "adv_half", "adv_full", "rec_quarter", "rec_half", "rec_full", "ridge"),
        "no_ridge": ("adv_quarter", "adv_half", "adv_full", "rec_quarter", "rec_half", "rec_full", "verif"),
        "no_intermediate": ("adv_quarter", "adv_half", "adv_full", "rec_quarter", "rec_half", "rec_full",
                            "ridge", "verif_embedding"),
        "single": ("adv_full", "rec_full", "ridge", "verif"),
        "full": ("adv_quarter", "adv_half", "adv_full", "rec_quarter", "rec_half", "rec_full", "ridge", "verif"),
    }
    for name, flags in TABLE_FLAGS.items():
        assert enabled_terms(flags) == expect[name], name
    assert len({enabled_terms(f) for f in TABLE_FLAGS.values()}) == 6


def test_unknown_flag_rejected():
    with pytest.raises(LossError):
        normalize_flags(["no_such_flag"])
    assert normalize_flags(["plain_cgan"]) == frozenset(ABLATION_FLAGS)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3), finite, finite)
def test_disabling_equals_zero_weight(g, rec, ridge, verif):
    w = LossWeights()
    no_r, _ = weighted_total(g, rec, ridge, verif, w, ["no_ridge"])
    zero_r, _ = weighted_total(g, rec, ridge, verif, LossWeights(lambda_ridge=0.0), [])
    assert abs(no_r - zero_r) <= 1e-12
    no_v, _ = weighted_total(g, rec, ridge, verif, w, ["no_verifier"])
    zero_v, _ = weighted_total(g, rec, ridge, verif, LossWeights(lambda_verif=0.0), [])
    assert abs(no_v - zero_v) <= 1e-12
    # single discriminator equals the full sum with the two lower scales zeroed
    single, _ = weighted_total(g, rec, ridge, verif, w, ["single_discriminator"])
    zeroed, _ = weighted_total([0.0, 0.0, g[2]], [0.0, 0.0, rec[2]], ridge, verif, w, [])
    assert abs(single - zeroed) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3), finite, finite,
       st.sets(st.sampled_from(ABLATION_FLAGS)))
def test_total_invariant(g, rec, ridge, verif, flags):
    rep = total_generator_loss(g, rec, ridge, verif, ablation_flags=flags)
    w = LossWeights()
    coef = {"adv": 1.0, "rec": w.lambda_rec, "ridge": w.lambda_ridge, "verif": w.lambda_verif}
    val = {"adv_quarter": g[0], "adv_half": g[1], "adv_full": g[2], "rec_quarter": rec[0],
           "rec_half": rec[1], "rec_full": rec[2], "ridge": ridge, "verif": verif, "verif_embedding": verif}
    expect = sum(coef[n.split("_")[0]] * val[n] for n in rep.active_terms)
    assert math.isclose(rep.total, expect, rel_tol=1e-12, abs_tol=1e-12)


def test_enabled_term_without_value_errors():
    with pytest.raises(LossError):
        total_generator_loss([1, 1, 1], [1, 1, 1], None, 1.0)
    with pytest.raises(LossError):
        total_generator_loss([float("inf"), 1, 1], [1, 1, 1], 1.0, 1.0)
