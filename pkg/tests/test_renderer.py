import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from semfield.field import FieldConfig, LatentField
from semfield.renderer import (
    quadrature_weights,
    render_feature,
    render_rays,
    render_rgb,
    render_semantic,
)

from analytic_fields import ANALYTIC_FIELDS, BG, T_FAR, T_NEAR, continuous_rgb, midpoint_depths, oracle_rgb
from gradtools import assert_grads_match


def t64(x):
    return torch.as_tensor(x, dtype=torch.float64)


class TestQuadratureWeights:
    def test_empty_space(self):
        trans, w = quadrature_weights(t64(np.zeros(10)), t64(np.full(10, 0.3)))
        assert torch.all(trans == 1.0)
        assert torch.all(w == 0.0)

    def test_single_sample_half_weight(self):
        trans, w = quadrature_weights(t64([math.log(2.0)]), t64([1.0]))
        assert w[0].item() == pytest.approx(0.5, abs=1e-15)
        assert trans[0].item() == 1.0

    def test_telescoping_identity_random(self):
        rng = np.random.default_rng(0)
        sigmas = t64(rng.uniform(0, 5, size=(1500, 16)))
        deltas = t64(rng.uniform(0, 0.5, size=(1500, 16)))
        trans, w = quadrature_weights(sigmas, deltas)
        residual = torch.exp(-(sigmas * deltas).sum(-1))
        total = w.sum(-1) + residual
        assert torch.max(torch.abs(total - 1.0)).item() <= 1e-10

    def test_monotone_transmittance_and_weight_bounds(self):
        rng = np.random.default_rng(1)
        sigmas = t64(rng.uniform(0, 8, size=(1000, 12)))
        deltas = t64(rng.uniform(0, 0.4, size=(1000, 12)))
        trans, w = quadrature_weights(sigmas, deltas)
        assert torch.all(trans[:, 1:] <= trans[:, :-1])
        assert torch.all((w >= 0) & (w <= 1))
        assert torch.all(w.sum(-1) <= 1.0 + 1e-12)

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError):
            quadrature_weights(t64([-0.1]), t64([1.0]))

    @given(
        vals=st.lists(
            st.tuples(
                st.floats(0, 20, allow_nan=False), st.floats(0, 1, allow_nan=False)
            ),
            min_size=1,
            max_size=64,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_identity_property(self, vals):
        sigmas = t64([v[0] for v in vals])
        deltas = t64([v[1] for v in vals])
        trans, w = quadrature_weights(sigmas, deltas)
        residual = torch.exp(-(sigmas * deltas).sum())
        assert abs((w.sum() + residual).item() - 1.0) <= 1e-10
        assert torch.all(trans[1:] <= trans[:-1])


class TestRenderRgb:
    def test_empty_space_gives_background_exactly(self):
        w = t64(np.zeros((4, 8)))
        colors = t64(np.random.default_rng(0).random((4, 8, 3)))
        bg = t64([0.2, 0.4, 0.6])
        out = render_rgb(w, colors, bg)
        assert torch.equal(out, bg.expand(4, 3))

    def test_opaque_first_sample(self):
        sigmas = t64([[1e9, 1.0, 1.0]])
        deltas = t64([[1.0, 1.0, 1.0]])
        _, w = quadrature_weights(sigmas, deltas)
        colors = t64([[[0.9, 0.1, 0.3], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]])
        out = render_rgb(w, colors, t64([0.5, 0.5, 0.5]))
        np.testing.assert_allclose(out[0].numpy(), [0.9, 0.1, 0.3], atol=1e-12)

    def test_constant_slab_closed_form(self):
        # constant density fills the whole depth range; quadrature is exact
        n = 64
        depths = midpoint_depths(n)
        deltas = np.empty_like(depths)
        deltas[:-1] = np.diff(depths)
        deltas[-1] = T_FAR - depths[-1]
        sigma0, c0 = 0.8, np.array([0.3, 0.7, 0.2])
        _, w = quadrature_weights(t64(np.full((1, n), sigma0)), t64(deltas[None]))
        out = render_rgb(w, t64(np.tile(c0, (1, n, 1))), t64(BG))
        # exact depth covered by the quadrature starts at the first sample
        covered = T_FAR - depths[0]
        expected = c0 * (1 - math.exp(-sigma0 * covered)) + BG * math.exp(-sigma0 * covered)
        np.testing.assert_allclose(out[0].numpy(), expected, rtol=1e-12)

    @pytest.mark.parametrize("name", sorted(ANALYTIC_FIELDS))
    def test_matches_dense_quadrature_oracle(self, name):
        field_fn = ANALYTIC_FIELDS[name]
        dense = oracle_rgb(field_fn, 4096)
        depths = midpoint_depths(64)
        deltas = np.empty_like(depths)
        deltas[:-1] = np.diff(depths)
        deltas[-1] = T_FAR - depths[-1]
        sigma, color = field_fn(depths)
        _, w = quadrature_weights(t64(sigma[None]), t64(deltas[None]))
        out = render_rgb(w, t64(color[None]), t64(BG))[0].numpy()
        rel = np.linalg.norm(out - dense) / np.linalg.norm(dense)
        assert rel <= 1e-3

    @pytest.mark.parametrize("name", sorted(ANALYTIC_FIELDS))
    def test_oracle_anchored_to_continuous_integral(self, name):
        field_fn = ANALYTIC_FIELDS[name]
        dense = oracle_rgb(field_fn, 4096)
        cont = continuous_rgb(field_fn)
        assert np.linalg.norm(dense - cont) / np.linalg.norm(cont) <= 1e-6

    @pytest.mark.parametrize("name", sorted(ANALYTIC_FIELDS))
    def test_error_decreases_as_samples_double(self, name):
        field_fn = ANALYTIC_FIELDS[name]
        dense = oracle_rgb(field_fn, 4096)
        errs = []
        for n in (8, 16, 32, 64):
            depths = midpoint_depths(n)
            deltas = np.empty_like(depths)
            deltas[:-1] = np.diff(depths)
            deltas[-1] = T_FAR - depths[-1]
            sigma, color = field_fn(depths)
            _, w = quadrature_weights(t64(sigma[None]), t64(deltas[None]))
            out = render_rgb(w, t64(color[None]), t64(BG))[0].numpy()
            errs.append(np.linalg.norm(out - dense) / np.linalg.norm(dense))
        assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))


class TestRenderSemantic:
    def test_unanimous_samples(self):
        sigmas = t64(np.full((1, 8), 5.0))
        deltas = t64(np.full((1, 8), 0.5))
        _, w = quadrature_weights(sigmas, deltas)
        assert w.sum().item() > 0.99
        logits = t64(np.tile([0.0, 8.0, -2.0, 0.0], (1, 8, 1)))
        probs = render_semantic(w, logits)
        assert probs[0].argmax().item() == 1

    def test_empty_space_routes_to_background(self):
        w = t64(np.zeros((3, 8)))
        logits = t64(np.random.default_rng(0).normal(size=(3, 8, 5)))
        probs = render_semantic(w, logits)
        assert torch.all(probs.argmax(dim=-1) == 0)

    def test_simplex_over_random_inputs(self):
        rng = np.random.default_rng(2)
        sigmas = t64(rng.uniform(0, 4, size=(500, 10)))
        deltas = t64(rng.uniform(0, 0.5, size=(500, 10)))
        _, w = quadrature_weights(sigmas, deltas)
        probs = render_semantic(w, t64(rng.normal(size=(500, 10, 6))))
        assert torch.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(-1).numpy(), 1.0, atol=1e-6)


class TestRenderFeature:
    def test_empty_space_zero(self):
        w = t64(np.zeros((2, 6)))
        feats = t64(np.random.default_rng(0).normal(size=(2, 6, 7)))
        assert torch.all(render_feature(w, feats) == 0)

    def test_constant_feature_scales_with_acc(self):
        rng = np.random.default_rng(1)
        sigmas = t64(rng.uniform(0, 2, size=(1, 8)))
        deltas = t64(rng.uniform(0, 0.5, size=(1, 8)))
        _, w = quadrature_weights(sigmas, deltas)
        v = t64(rng.normal(size=7))
        out = render_feature(w, v.expand(1, 8, 7))
        np.testing.assert_allclose(out[0].numpy(), (w.sum() * v).numpy(), rtol=1e-12)

    def test_matches_oracle_linearity(self):
        # feature render is the same weighted sum as RGB without background
        rng = np.random.default_rng(3)
        sigma, color = ANALYTIC_FIELDS["double_bump"](midpoint_depths(64))
        depths = midpoint_depths(64)
        deltas = np.empty_like(depths)
        deltas[:-1] = np.diff(depths)
        deltas[-1] = T_FAR - depths[-1]
        _, w = quadrature_weights(t64(sigma[None]), t64(deltas[None]))
        out = render_feature(w, t64(color[None]))[0].numpy()
        dense = oracle_rgb(ANALYTIC_FIELDS["double_bump"], 4096, bg=np.zeros(3))
        assert np.linalg.norm(out - dense) / np.linalg.norm(dense) <= 1e-3


class TestRenderRays:
    def tiny_setup(self):
        cfg = FieldConfig(z_dim=4, n_classes=3, feature_dim=4, trunk_layers=2,
                          hidden=12, skip_at=1, rgb_hidden=6, x_freqs=2, d_freqs=1)
        torch.manual_seed(0)
        field = LatentField(cfg, dtype=torch.float64)
        z = torch.randn(4, dtype=torch.float64)
        origins = t64(np.zeros((5, 3)))
        dirs = torch.nn.functional.normalize(torch.randn(5, 3, dtype=torch.float64), dim=-1)
        depths = t64(np.sort(np.random.default_rng(0).uniform(0.5, 4.0, size=(5, 6)), axis=-1))
        return field, z, origins, dirs, depths

    def test_shared_weights_across_fields(self):
        field, z, origins, dirs, depths = self.tiny_setup()
        with torch.no_grad():
            res = render_rays(field, z, origins, dirs, depths, 4.5, t64([0, 0, 0]))
            # recompute weights once and check every head used them
            out = field(z, (origins.unsqueeze(1) + depths.unsqueeze(-1) * dirs.unsqueeze(1)).reshape(-1, 3))
            sigma = out.sigma.view(5, 6)
            deltas = torch.cat([depths[:, 1:] - depths[:, :-1], 4.5 - depths[:, -1:]], dim=-1)
            _, w = quadrature_weights(sigma, deltas)
        np.testing.assert_allclose(res.acc.numpy(), w.sum(-1).numpy(), rtol=1e-12)
        np.testing.assert_allclose(
            res.feat.numpy(), (w.unsqueeze(-1) * out.feat.view(5, 6, -1)).sum(1).numpy(), rtol=1e-12
        )

    def test_invariants_on_forward(self):
        field, z, origins, dirs, depths = self.tiny_setup()
        with torch.no_grad():
            res = render_rays(field, z, origins, dirs, depths, 4.5, t64([0.1, 0.1, 0.1]))
        assert torch.all((res.acc >= 0) & (res.acc <= 1 + 1e-6))
        np.testing.assert_allclose(res.sem_probs.sum(-1).numpy(), 1.0, atol=1e-6)
        assert torch.all((res.rgb >= 0) & (res.rgb <= 1))

    def test_rgb_gradient_wrt_density_matches_fd(self):
        # gradient through the quadrature (density path) against central differences
        rng = np.random.default_rng(4)
        sigmas = torch.tensor(rng.uniform(0.1, 2.0, size=(3, 8)), dtype=torch.float64, requires_grad=True)
        deltas = t64(rng.uniform(0.05, 0.4, size=(3, 8)))
        colors = t64(rng.random((3, 8, 3)))
        bg = t64([0.3, 0.2, 0.1])
        proj = t64(rng.normal(size=(3, 3)))

        def loss():
            _, w = quadrature_weights(sigmas, deltas)
            return (render_rgb(w, colors, bg) * proj).sum()

        assert_grads_match(loss, {"sigmas": sigmas}, np.random.default_rng(5), n_probe=6)
