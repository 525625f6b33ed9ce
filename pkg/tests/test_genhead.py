import numpy as np
import pytest

from capvit.data.vocab import BOS_ID, EOS_ID, PAD_ID
from capvit.errors import ConfigError, DegenerateBatchError
from capvit.genhead import (
    DecoderConfig,
    build_prefix,
    caption_loss,
    caption_loss_mask,
    decode_forward,
    generative_loss,
    greedy_decode,
    init_connector,
    init_decoder,
    keep_count,
    sample_batch_masks,
    sample_mask,
)
from capvit.rng import SplitMix64
from capvit.tensor import Tensor, grad_check

V = 20
T_LEN = 8


def small_decoder(keep_ratio=0.5, depth=2, width=16, heads=2, max_caption_len=T_LEN):
    return DecoderConfig(width=width, depth=depth, heads=heads, vocab_size=V,
                         max_caption_len=max_caption_len, keep_ratio=keep_ratio)


def make_parts(seed=0, d_enc=12, cfg=None):
    cfg = cfg or small_decoder()
    rng = np.random.default_rng(seed)
    connector = init_connector(d_enc, cfg.width, rng, np.float64)
    decoder = init_decoder(cfg, rng, np.float64)
    return cfg, connector, decoder


def random_caption_ids(rng, b, t):
    """BOS + random ids + EOS + PAD padding, like the tokenizer emits."""
    rows = []
    for _ in range(b):
        n_content = int(rng.integers(1, t - 1))
        content = rng.integers(4, V, size=n_content).tolist()
        row = [BOS_ID, *content, EOS_ID]
        row += [PAD_ID] * (t - len(row))
        rows.append(row[:t])
    rows = np.asarray(rows, dtype=np.int64)
    rows[:, t - 1] = np.where(rows[:, t - 1] != PAD_ID, EOS_ID, PAD_ID)
    return rows


class TestKeepCount:
    def test_table_value(self):
        assert keep_count(256, 0.35) == 90

    def test_identity_ratio(self):
        assert keep_count(64, 1.0) == 64

    def test_floor_guard(self):
        assert keep_count(4, 0.1) == 1

    def test_round_half_up(self):
        assert keep_count(10, 0.25) == 3  # 2.5 rounds up

    def test_invalid_ratio(self):
        with pytest.raises(ConfigError):
            keep_count(16, 0.0)
        with pytest.raises(ConfigError):
            keep_count(16, 1.2)


class TestSampleMask:
    def test_full_keep_is_arange(self):
        got = sample_mask(9, 1.0, SplitMix64(0))
        assert got.tolist() == list(range(9))

    def test_contract_over_seeds(self):
        for seed in range(1000):
            got = sample_mask(16, 0.5, SplitMix64(seed))
            assert len(got) == 8
            assert (np.diff(got) > 0).all()
            assert got.min() >= 0 and got.max() < 16

    def test_per_index_frequency_uniform(self):
        n, draws = 16, 100000
        counts = np.zeros(n)
        for seed in range(draws):
            counts[sample_mask(n, 0.5, SplitMix64(seed))] += 1
        freq = counts / draws
        assert np.abs(freq - 0.5).max() < 0.01

    def test_batch_masks_keyed_by_example(self):
        a = sample_batch_masks(4, 16, 0.5, seed=3, step=7)
        b = sample_batch_masks(4, 16, 0.5, seed=3, step=7)
        assert np.array_equal(a, b)
        c = sample_batch_masks(4, 16, 0.5, seed=3, step=8)
        assert not np.array_equal(a, c)
        assert len({tuple(r) for r in a}) > 1  # fresh sample per example


class TestDecodeForward:
    def test_caption_causality(self):
        cfg, connector, decoder = make_parts(1)
        rng = np.random.default_rng(2)
        vis = Tensor(rng.normal(size=(1, 6, 12)))
        ids = random_caption_ids(rng, 1, T_LEN)
        kept = sample_batch_masks(1, 6, cfg.keep_ratio, 0, 0)
        base = decode_forward(build_prefix(vis, kept, ids, connector, decoder), decoder, cfg).data

        for j in range(1, T_LEN - 1):
            bumped = ids.copy()
            bumped[0, j] = (bumped[0, j] + 1) % V or 4
            out = decode_forward(
                build_prefix(vis, kept, bumped, connector, decoder), decoder, cfg
            ).data
            assert np.abs(out[0, :j] - base[0, :j]).max() < 1e-9
            assert np.abs(out[0, j:] - base[0, j:]).max() > 0

    def test_visual_perturbation_reaches_all_positions(self):
        cfg, connector, decoder = make_parts(3)
        rng = np.random.default_rng(4)
        vis = rng.normal(size=(1, 6, 12))
        ids = random_caption_ids(rng, 1, T_LEN)
        kept = sample_batch_masks(1, 6, cfg.keep_ratio, 0, 0)
        base = decode_forward(
            build_prefix(Tensor(vis), kept, ids, connector, decoder), decoder, cfg
        ).data
        bumped = vis.copy()
        bumped[0, kept[0][0]] += 1e-3
        out = decode_forward(
            build_prefix(Tensor(bumped), kept, ids, connector, decoder), decoder, cfg
        ).data
        assert (np.abs(out - base).max(axis=-1) > 0).all()

    def test_batched_equals_incremental(self):
        cfg, connector, decoder = make_parts(5)
        rng = np.random.default_rng(6)
        vis = Tensor(rng.normal(size=(1, 5, 12)))
        ids = random_caption_ids(rng, 1, T_LEN)
        kept = np.arange(5, dtype=np.int64)[None]
        full = decode_forward(build_prefix(vis, kept, ids, connector, decoder), decoder, cfg).data
        for t in range(1, T_LEN + 1):
            part = decode_forward(
                build_prefix(vis, kept, ids[:, :t], connector, decoder), decoder, cfg
            ).data
            assert np.abs(part[0, -1] - full[0, t - 1]).max() < 1e-6

    def test_sequence_cap(self):
        cfg = small_decoder(max_caption_len=T_LEN)
        cfg = DecoderConfig(width=16, depth=1, heads=2, vocab_size=V,
                            max_caption_len=T_LEN, keep_ratio=1.0, max_seq=10)
        rng = np.random.default_rng(7)
        connector = init_connector(12, 16, rng, np.float64)
        decoder = init_decoder(cfg, rng, np.float64)
        vis = Tensor(rng.normal(size=(1, 6, 12)))
        ids = random_caption_ids(rng, 1, T_LEN)
        with pytest.raises(ConfigError, match="exceeds"):
            decode_forward(build_prefix(vis, np.arange(6)[None], ids, connector, decoder),
                           decoder, cfg)

    def test_bos_required(self):
        cfg, connector, decoder = make_parts(8)
        rng = np.random.default_rng(9)
        vis = Tensor(rng.normal(size=(1, 4, 12)))
        ids = random_caption_ids(rng, 1, T_LEN)
        ids[0, 0] = 5
        with pytest.raises(ConfigError, match="BOS"):
            decode_forward(build_prefix(vis, np.arange(4)[None], ids, connector, decoder),
                           decoder, cfg)


class TestCaptionLoss:
    def test_uniform_logits(self):
        ids = np.array([[BOS_ID, 5, 6, EOS_ID, PAD_ID]])
        logits = Tensor(np.zeros((1, 5, 64)))
        loss = caption_loss(logits, ids, caption_loss_mask(ids))
        assert np.isclose(loss.item(), np.log(64))

    def test_all_pad_caption_degenerate(self):
        ids = np.full((1, 5), PAD_ID)
        logits = Tensor(np.zeros((1, 5, V)))
        with pytest.raises(DegenerateBatchError):
            caption_loss(logits, ids, caption_loss_mask(ids))

    def test_mask_covers_tokens_through_eos(self):
        ids = np.array([[BOS_ID, 7, 9, EOS_ID, PAD_ID, PAD_ID]])
        mask = caption_loss_mask(ids)
        assert mask[0].tolist() == [True, True, True, False, False, False]

    def test_loss_permutation_equivariant(self):
        cfg, connector, decoder = make_parts(10)
        rng = np.random.default_rng(11)
        vis = rng.normal(size=(3, 6, 12))
        ids = random_caption_ids(rng, 3, T_LEN)
        kept = np.tile(np.arange(6)[None], (3, 1))

        def loss_of(order):
            prefix = build_prefix(Tensor(vis[order]), kept, ids[order], connector, decoder)
            return caption_loss(
                decode_forward(prefix, decoder, cfg), ids[order], caption_loss_mask(ids[order])
            ).item()

        assert np.isclose(loss_of([0, 1, 2]), loss_of([2, 0, 1]), rtol=0, atol=1e-12)

    def test_keep_ratio_one_is_rng_independent(self):
        cfg = small_decoder(keep_ratio=1.0)
        _, connector, decoder = make_parts(12, cfg=cfg)
        rng = np.random.default_rng(13)
        vis = Tensor(rng.normal(size=(2, 6, 12)))
        ids = random_caption_ids(rng, 2, T_LEN)
        a, _ = generative_loss(vis, ids, connector, decoder, cfg, seed=0, step=0)
        b, _ = generative_loss(vis, ids, connector, decoder, cfg, seed=99, step=42)
        assert a.item() == b.item()

    def test_gradient_full_head(self):
        cfg, connector, decoder = make_parts(14)
        rng = np.random.default_rng(15)
        vis = Tensor(rng.normal(size=(2, 5, 12)), requires_grad=True)
        ids = random_caption_ids(rng, 2, T_LEN)
        kept = sample_batch_masks(2, 5, cfg.keep_ratio, 1, 1)
        params = [vis, connector.w, connector.b, decoder.tok, decoder.pos,
                  decoder.seg_visual, decoder.out_proj]

        def f():
            prefix = build_prefix(vis, kept, ids, connector, decoder)
            return caption_loss(decode_forward(prefix, decoder, cfg), ids,
                                caption_loss_mask(ids))

        assert grad_check(f, params, sample=6, seed=0, noise_floor=1e-10) < 1e-4


class TestGreedyDecode:
    def test_zero_weights_tie_break_lowest_id(self):
        cfg = small_decoder(depth=0)
        rng = np.random.default_rng(16)
        connector = init_connector(12, cfg.width, rng, np.float64)
        decoder = init_decoder(cfg, rng, np.float64)
        decoder.out_proj = Tensor(np.zeros((cfg.width, V)), requires_grad=True)
        vis = Tensor(rng.normal(size=(1, 4, 12)))
        seq = greedy_decode(vis, connector, decoder, cfg)
        assert seq[0] == BOS_ID
        assert all(t == 0 for t in seq[1:])  # argmax of all-zero logits is id 0

    def test_terminates_within_length_bound(self):
        cfg = small_decoder(max_caption_len=3)
        rng = np.random.default_rng(17)
        connector = init_connector(12, cfg.width, rng, np.float64)
        decoder = init_decoder(cfg, rng, np.float64)
        vis = Tensor(rng.normal(size=(1, 4, 12)))
        seq = greedy_decode(vis, connector, decoder, cfg)
        assert len(seq) <= 3

    def test_deterministic(self):
        cfg, connector, decoder = make_parts(18)
        vis = Tensor(np.random.default_rng(19).normal(size=(1, 6, 12)))
        a = greedy_decode(vis, connector, decoder, cfg)
        b = greedy_decode(vis, connector, decoder, cfg)
        assert a == b


def test_mask_count_invariance():
    for seed in range(50):
        kept = sample_batch_masks(8, 13, 0.4, seed=seed, step=0)
        assert kept.shape == (8, keep_count(13, 0.4))
