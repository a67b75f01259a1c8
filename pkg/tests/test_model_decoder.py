import numpy as np
import pytest
import torch

from farm.model import DecoderConfig, MapDecoder, TimestepEmbed, rms_norm
from farm.model.network import grid_coords


def tiny_decoder(**kw) -> MapDecoder:
    enc_width = kw.pop("enc_width", 24)
    cfg = DecoderConfig(depth=kw.pop("depth", 2), width=kw.pop("width", 24),
                        heads=kw.pop("heads", 2), d_t=kw.pop("d_t", 16),
                        patch=kw.pop("patch", (4, 4, 2)), **kw)
    torch.manual_seed(0)
    return MapDecoder(cfg, enc_width=enc_width).double()


class TestTimestepEmbed:
    def test_zero_time_frequencies(self):
        emb = TimestepEmbed(16).double()
        e = emb.frequencies(torch.zeros(1, dtype=torch.float64))
        assert torch.allclose(e[0, :8], torch.ones(8, dtype=torch.float64))
        assert torch.allclose(e[0, 8:], torch.zeros(8, dtype=torch.float64))

    def test_frequency_dim(self):
        emb = TimestepEmbed(20).double()
        assert emb.omega.numel() == 10
        assert emb.frequencies(torch.tensor([0.3])).shape == (1, 20)

    def test_geometric_span(self):
        emb = TimestepEmbed(16)
        assert emb.omega[0].item() == pytest.approx(1.0)
        assert emb.omega[-1].item() == pytest.approx(1e4, rel=1e-5)

    def test_local_smoothness(self):
        emb = TimestepEmbed(16).double()
        t0, dt = 0.5, 1e-4
        # local Lipschitz constant: sup of the derivative norm over [t0, t0+dt]
        lipschitz = 0.0
        for u in np.linspace(t0, t0 + dt, 21):
            jac = torch.autograd.functional.jacobian(
                lambda v: emb(v).squeeze(0), torch.tensor([u], dtype=torch.float64))
            lipschitz = max(lipschitz, jac.norm().item())
        with torch.no_grad():
            delta = (emb(torch.tensor([t0 + dt], dtype=torch.float64))
                     - emb(torch.tensor([t0], dtype=torch.float64)))
        assert delta.norm().item() <= lipschitz * dt + 1e-9

    def test_odd_dt_rejected(self):
        with pytest.raises(ValueError):
            DecoderConfig(d_t=15)


class TestRmsNorm:
    def test_constant_row_gives_sign(self):
        for c in (3.7, -0.4):
            x = torch.full((1, 6), c, dtype=torch.float64)
            expect = torch.full((1, 6), float(np.sign(c)), dtype=torch.float64)
            assert torch.allclose(rms_norm(x), expect, atol=1e-12)

    def test_unit_rms_output(self):
        x = torch.randn(5, 16, dtype=torch.float64)
        out = rms_norm(x)
        assert torch.allclose(out.pow(2).mean(-1), torch.ones(5, dtype=torch.float64))

    def test_no_mean_subtraction(self):
        # a shifted constant vector normalizes to +-1, not to 0 as LayerNorm would
        x = torch.full((1, 4), 10.0, dtype=torch.float64)
        assert torch.allclose(rms_norm(x), torch.ones(1, 4, dtype=torch.float64))


class TestDecoderBlocks:
    def test_identity_at_init(self):
        dec = tiny_decoder()
        x = torch.randn(2, 8, 24, dtype=torch.float64)
        coords = grid_coords(2, 2, 2).double().unsqueeze(0).expand(2, -1, -1)
        from farm.model.pos import rope_phases
        phases = rope_phases(coords, 24)
        t_vec = dec.t_embed(torch.tensor([0.2, 0.9], dtype=torch.float64))
        y = x
        for blk in dec.blocks:
            y = blk(y, t_vec, phases)
        assert torch.allclose(y, x, atol=1e-6)

    def test_modulation_zero_initialized(self):
        dec = tiny_decoder()
        for blk in dec.blocks:
            assert torch.all(blk.modulation.weight == 0)
            assert torch.all(blk.modulation.bias == 0)

    def test_gamma_beta_zero_passes_rms_input(self):
        # with zero modulation the attention stage sees plain rms_norm(x)
        dec = tiny_decoder(depth=1)
        blk = dec.blocks[0]
        x = torch.randn(1, 4, 24, dtype=torch.float64)
        b1 = g1 = torch.zeros(1, 1, 24, dtype=torch.float64)
        h = (1 + g1) * rms_norm(x) + b1
        assert torch.allclose(h, rms_norm(x))

    def test_attention_rows_sum_to_one(self):
        dec = tiny_decoder(depth=1)
        blk = dec.blocks[0]
        x = torch.randn(1, 6, 24, dtype=torch.float64)
        coords = torch.randint(0, 3, (1, 6, 3)).double()
        from farm.model.pos import rope_phases
        logits = blk.attn.logits(x, rope_phases(coords, 24))
        attn = torch.softmax(logits, dim=-1)
        assert torch.allclose(attn.sum(-1), torch.ones_like(attn.sum(-1)), atol=1e-6)

    def test_layernorm_ablation_mode(self):
        dec = tiny_decoder(norm="layernorm")
        x = torch.randn(1, 4, 24, dtype=torch.float64)
        out = dec.blocks[0]._norm(x)
        assert torch.allclose(out.mean(-1), torch.zeros(1, 4, dtype=torch.float64),
                              atol=1e-10)


class TestAlignAndHead:
    def test_align_shape(self):
        dec = tiny_decoder(enc_width=32)
        f_enc = torch.randn(2, 5, 32, dtype=torch.float64)
        assert dec.align_encoder(f_enc).shape == (2, 5, 24)

    def test_align_affine(self):
        dec = tiny_decoder()
        x = torch.randn(1, 4, 24, dtype=torch.float64)
        lhs = dec.align_encoder(3 * x) - dec.align.bias
        rhs = 3 * (dec.align_encoder(x) - dec.align.bias)
        assert torch.allclose(lhs, rhs, atol=1e-9)

    def test_embed_noisy_never_sees_visible_dim(self):
        dec = tiny_decoder()
        assert dec.embed.in_features == 4 * 4 * 4 * 2
        assert dec.head.out_features == 4 * 4 * 2

    def test_decode_reduces_to_head_of_embedding_at_init(self):
        # with zero-init gates the block stack is the identity, so the full
        # decoder is head(tokens + PE)
        dec = tiny_decoder()
        tokens = torch.randn(1, 8, 24, dtype=torch.float64)
        coords = grid_coords(2, 2, 2).unsqueeze(0)
        out = dec(tokens, torch.tensor([0.4], dtype=torch.float64), coords)
        from farm.model.pos import sincos_pe
        expect = dec.head(tokens + sincos_pe(coords.double(), 24))
        assert torch.allclose(out, expect, atol=1e-9)

    def test_mask_order_invariance(self):
        dec = tiny_decoder()
        tokens = torch.randn(1, 8, 24, dtype=torch.float64)
        coords = grid_coords(2, 2, 2).unsqueeze(0)
        t = torch.tensor([0.4], dtype=torch.float64)
        out = dec(tokens, t, coords)
        assert torch.allclose(out, dec(tokens, t, coords))

    def test_depth_zero_decoder_affine(self):
        # blocks skipped entirely: head(tokens + PE) must satisfy superposition
        dec = tiny_decoder(depth=0)
        coords = grid_coords(2, 2, 2).unsqueeze(0)
        t = torch.tensor([0.4], dtype=torch.float64)
        a = torch.randn(1, 8, 24, dtype=torch.float64)
        b = torch.randn(1, 8, 24, dtype=torch.float64)
        f = lambda x: dec(x, t, coords)
        # affine maps preserve affine combinations (weights summing to 1)
        lhs = f(0.3 * a + 0.7 * b)
        rhs = 0.3 * f(a) + 0.7 * f(b)
        assert torch.allclose(lhs, rhs, atol=1e-9)
