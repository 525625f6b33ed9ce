import numpy as np
import pytest

from capvit.data import (
    BOS_ID,
    EOS_ID,
    GRAMMAR_WORDS,
    PAD_ID,
    UNK_ID,
    CorpusSpec,
    Corpus,
    Vocab,
    build_batch,
    build_vocab,
    caption,
    base_caption,
    detokenize,
    generate_scene,
    read_shard,
    tokenize,
    training_caption,
    write_shards,
)
from capvit.data.captions import relational_clause
from capvit.data.corpus import max_caption_len
from capvit.data.scenes import COLORS, SHAPES, Scene, SceneObject, render
from capvit.data.vocab import load_vocab, save_vocab
from capvit.errors import ConfigError
from capvit.rng import SplitMix64


class TestScenes:
    def test_same_seed_identical_pixels(self):
        a = generate_scene(17).render(32)
        b = generate_scene(17).render(32)
        assert np.array_equal(a, b)

    def test_invariants_over_seed_sweep(self):
        for seed in range(2000):
            scene = generate_scene(seed)
            assert 1 <= len(scene.objects) <= 3
            cells = [o.cell for o in scene.objects]
            assert len(set(cells)) == len(cells)
            assert all(0 <= c < 9 for c in cells)
            assert all(o.shape in SHAPES and o.color in COLORS for o in scene.objects)

    def test_color_marginals_uniform(self):
        counts = {c: 0 for c in COLORS}
        total = 0
        for seed in range(100000):
            for obj in generate_scene(seed).objects:
                counts[obj.color] += 1
                total += 1
        for c in COLORS:
            assert abs(counts[c] / total - 1 / len(COLORS)) < 0.02

    def test_render_range_and_shape(self):
        img = generate_scene(3).render(48)
        assert img.shape == (48, 48, 3)
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_render_is_function_of_objects_and_size(self):
        objs = (SceneObject("circle", "red", 4),)
        assert np.array_equal(render(objs, 32, 32), render(objs, 32, 32))
        assert render(objs, 64, 64).shape == (64, 64, 3)

    def test_object_actually_drawn_in_its_cell(self):
        img = render((SceneObject("square", "green", 0),), 33, 33)
        assert img[:11, :11, 1].max() > 0.5  # green in top-left cell
        assert img[22:, 22:].max() == 0.0  # empty bottom-right


class TestCaptions:
    def test_single_red_circle_recap_template(self):
        scene = Scene(objects=(SceneObject("circle", "red", 4),), seed=0)
        pair = caption(scene, "recap", 0.0, 0)
        assert pair.synthetic == "a red circle in the middle"

    def test_zero_noise_alt_text_web_equals_synthetic(self):
        for seed in range(50):
            scene = generate_scene(seed)
            pair = caption(scene, "alt_text", 0.0, seed)
            assert pair.web == pair.synthetic

    def test_full_noise_alt_text_always_differs(self):
        for seed in range(1000):
            scene = generate_scene(seed)
            pair = caption(scene, "alt_text", 1.0, seed)
            assert pair.web != pair.synthetic

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError, match="alt_text"):
            caption(generate_scene(0), "bogus", 0.0, 0)

    def test_noise_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            caption(generate_scene(0), "recap", 1.5, 0)

    def test_synthetic_mentions_every_object(self):
        for seed in range(200):
            scene = generate_scene(seed)
            pair = caption(scene, "recap_v2", 1.0, seed)
            for obj in scene.objects:
                assert obj.color in pair.synthetic
                assert obj.shape in pair.synthetic

    def test_recap_v2_is_enrichment_of_recap(self):
        from collections import Counter

        for seed in range(300):
            scene = generate_scene(seed)
            recap = caption(scene, "recap", 0.0, seed).synthetic
            v2 = caption(scene, "recap_v2", 0.0, seed).synthetic
            assert v2.startswith(recap)
            assert Counter(recap.split()) <= Counter(v2.split())

    def test_training_caption_field_choice(self):
        scene = generate_scene(5)
        alt = caption(scene, "alt_text", 1.0, 5)
        assert training_caption(alt) == alt.web
        v2 = caption(scene, "recap_v2", 1.0, 5)
        assert training_caption(v2) == v2.synthetic

    def test_relational_clause_grounded(self):
        for seed in range(100):
            scene = generate_scene(seed)
            clause = relational_clause(scene, SplitMix64(seed))
            words = set(clause.split())
            assert words <= set(GRAMMAR_WORDS)
            mentioned = {o.color for o in scene.objects} | {o.shape for o in scene.objects}
            assert words & mentioned

    def test_captions_stay_inside_grammar(self):
        grammar = set(GRAMMAR_WORDS)
        for seed in range(300):
            scene = generate_scene(seed)
            for mode in ("alt_text", "recap", "recap_v2"):
                pair = caption(scene, mode, 0.7, seed)
                assert set(pair.synthetic.split()) <= grammar
                assert set(pair.web.split()) <= grammar


class TestVocab:
    def test_empty_corpus_gives_reserved_only(self):
        vocab = build_vocab(CorpusSpec(0, 0, "recap", 0.0, 32))
        assert vocab.size == 4

    def test_full_grammar_covered(self):
        vocab = build_vocab(CorpusSpec(0, 3000, "recap_v2", 0.5, 32))
        full = Vocab.full_grammar()
        assert set(vocab.id_to_token) <= set(full.id_to_token)
        assert vocab.size > 20

    def test_two_builds_identical(self):
        spec = CorpusSpec(0, 200, "recap_v2", 0.3, 32)
        a, b = build_vocab(spec), build_vocab(spec)
        assert a.token_to_id == b.token_to_id

    def test_grammar_words_all_have_ids_in_full_vocab(self):
        vocab = Vocab.full_grammar()
        for w in GRAMMAR_WORDS:
            assert vocab.id_of(w) >= 4
        assert vocab.size == len(GRAMMAR_WORDS) + 4

    def test_save_load_roundtrip(self, tmp_path):
        vocab = Vocab.full_grammar()
        save_vocab(vocab, tmp_path / "vocab.tsv")
        loaded = load_vocab(tmp_path / "vocab.tsv")
        assert loaded.token_to_id == vocab.token_to_id


class TestTokenize:
    def test_empty_string(self):
        ids = tokenize("", Vocab.full_grammar(), 6)
        assert ids.tolist() == [BOS_ID, EOS_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]

    def test_roundtrip_grammar_sentences(self):
        vocab = Vocab.full_grammar()
        for seed in range(150):
            text = caption(generate_scene(seed), "recap_v2", 0.0, seed).synthetic
            assert detokenize(tokenize(text, vocab, 64), vocab) == text

    def test_truncation_keeps_eos_last(self):
        vocab = Vocab.full_grammar()
        text = " ".join(["red"] * 30)
        ids = tokenize(text, vocab, 10)
        assert len(ids) == 10
        assert ids[0] == BOS_ID
        assert ids[-1] == EOS_ID
        assert PAD_ID not in ids

    def test_unknown_word_maps_to_unk(self):
        ids = tokenize("zebra", Vocab.full_grammar(), 5)
        assert ids[1] == UNK_ID

    def test_max_len_floor(self):
        with pytest.raises(ValueError):
            tokenize("a", Vocab.full_grammar(), 2)

    def test_pad_never_between_bos_and_eos(self):
        vocab = Vocab.full_grammar()
        for seed in range(100):
            text = caption(generate_scene(seed), "recap_v2", 0.6, seed).web
            ids = tokenize(text, vocab, 40).tolist()
            eos_pos = ids.index(EOS_ID)
            assert PAD_ID not in ids[:eos_pos]
            assert all(i == PAD_ID for i in ids[eos_pos + 1 :])


class TestCorpus:
    def test_reproducible_bit_exact(self):
        spec = CorpusSpec(0, 12, "recap_v2", 0.4, 32)
        a = Corpus.from_spec(spec)
        b = Corpus.from_spec(spec)
        assert np.array_equal(a.images, b.images)
        assert all(np.array_equal(x, y) for x, y in zip(a.train_ids, b.train_ids))

    def test_at_resolution_same_captions(self):
        spec = CorpusSpec(0, 8, "recap_v2", 0.0, 32)
        c32 = Corpus.from_spec(spec)
        c64 = c32.at_resolution(64)
        assert c64.images.shape == (8, 64, 64, 3)
        assert all(np.array_equal(x, y) for x, y in zip(c32.synthetic_ids, c64.synthetic_ids))

    def test_max_caption_len_matches_helper(self):
        spec = CorpusSpec(0, 40, "recap_v2", 0.3, 32)
        assert Corpus.from_spec(spec).max_caption_len() == max_caption_len(spec)

    def test_batch_immutable_and_padded(self):
        corpus = Corpus.from_spec(CorpusSpec(0, 6, "recap_v2", 0.0, 32))
        batch = build_batch(corpus, [0, 1, 2], max_len=40)
        assert batch.size == 3
        with pytest.raises(ValueError):
            batch.images[0, 0, 0, 0] = 1.0
        with pytest.raises(ValueError):
            batch.train[0, 0] = 5
        assert (batch.synthetic[:, 0] == BOS_ID).all()
        assert np.array_equal(batch.synthetic_pad_mask, batch.synthetic == PAD_ID)


class TestShards:
    def test_roundtrip(self, tmp_path):
        spec = CorpusSpec(0, 25, "recap_v2", 0.5, 32)
        vocab = Vocab.full_grammar()
        results = write_shards(spec, tmp_path, vocab, shard_size=10)
        assert len(results) == 3
        assert [n for _, _, n in results] == [10, 10, 5]
        corpus = Corpus.from_spec(spec, vocab)
        images, syn, web = read_shard(results[0][0])
        assert len(images) == 10
        assert np.allclose(images[3], corpus.images[3])
        assert np.array_equal(syn[3], corpus.synthetic_ids[3])
        assert np.array_equal(web[3], corpus.web_ids[3])

    def test_header_guard(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOT A SHARD")
        from capvit.errors import CheckpointError

        with pytest.raises(CheckpointError, match="header"):
            read_shard(bad)

    def test_deterministic_checksums(self, tmp_path):
        spec = CorpusSpec(0, 30, "recap_v2", 0.2, 32)
        r1 = write_shards(spec, tmp_path / "a", shard_size=100)
        r2 = write_shards(spec, tmp_path / "b", shard_size=100)
        assert [d for _, d, _ in r1] == [d for _, d, _ in r2]
