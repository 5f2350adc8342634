"""Dataset I/O, tokenization, vocabulary, and the synthetic generator."""

import json

import pytest

from quadgen.codec import AspectQuad
from quadgen.corpus import (BOS_ID, EOS_ID, PAD_ID, UNK_ID, RESERVED_TOKENS, CorpusError,
                            Example, SyntheticSpec, Vocabulary, build_vocabulary,
                            generate_synthetic, load_examples, save_examples)

INTRO_LINE = json.dumps({
    "sentence": "Service was good and food was wonderful",
    "quads": [
        {"at": "Service", "ot": "good", "ac": "service#general", "sp": "positive"},
        {"at": "food", "ot": "wonderful", "ac": "food#quality", "sp": "positive"},
    ],
})


class TestLoad:
    def test_single_line_two_quads(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(INTRO_LINE + "\n")
        examples = load_examples(path)
        assert len(examples) == 1
        assert len(examples[0].quads) == 2
        assert examples[0].sentence[0] == "Service"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("")
        assert load_examples(path) == []

    def test_bad_polarity_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        good = INTRO_LINE
        bad = good.replace("positive", "positiv")
        path.write_text(good + "\n" + bad + "\n")
        with pytest.raises(CorpusError, match=r":2"):
            load_examples(path)

    def test_unknown_fields_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        obj = json.loads(INTRO_LINE)
        obj["extra"] = 1
        path.write_text(json.dumps(obj) + "\n")
        with pytest.raises(CorpusError, match="unknown fields"):
            load_examples(path)
        obj = json.loads(INTRO_LINE)
        obj["quads"][0]["polarity"] = "positive"
        path.write_text(json.dumps(obj) + "\n")
        with pytest.raises(CorpusError, match="unknown quad fields"):
            load_examples(path)

    def test_missing_field_and_bad_json(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"sentence": "a b"}\n')
        with pytest.raises(CorpusError, match="quads"):
            load_examples(path)
        path.write_text("{not json\n")
        with pytest.raises(CorpusError, match="invalid JSON"):
            load_examples(path)

    def test_empty_quads_only_for_predictions(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps({"sentence": "a b", "quads": []}) + "\n")
        with pytest.raises(CorpusError):
            load_examples(path)
        assert load_examples(path, require_quads=False)[0].quads == ()

    def test_null_markers_become_implicit(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps({
            "sentence": "it was bad",
            "quads": [{"at": "NULL", "ot": "NULL", "ac": "restaurant#general",
                       "sp": "negative"}]}) + "\n")
        quad = load_examples(path)[0].quads[0]
        assert quad.at is None and quad.ot is None

    def test_round_trip(self, tmp_path):
        examples = [
            Example(("it", "was", "bad"),
                    (AspectQuad(None, "bad", "restaurant#general", "negative"),)),
            Example(("food", "was", "great"),
                    (AspectQuad("food", "great", "food#quality", "positive"),)),
        ]
        path = tmp_path / "d.jsonl"
        save_examples(examples, path)
        assert load_examples(path) == examples


class TestVocabulary:
    def test_reserved_ids_and_order(self):
        vocab = Vocabulary(RESERVED_TOKENS + ("apple", "pie"))
        assert vocab.tokens[:4] == ("<pad>", "<s>", "</s>", "<unk>")
        assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)
        assert vocab.token_id("apple") == len(RESERVED_TOKENS)

    def test_reserved_prefix_required(self):
        with pytest.raises(CorpusError):
            Vocabulary(("apple", "pie"))

    def test_encode_lowercases_words_not_markers(self):
        vocab = Vocabulary(RESERVED_TOKENS + ("food", "was", "wonderful"))
        assert vocab.encode("Food WAS wonderful") == [vocab.token_id("food"),
                                                      vocab.token_id("was"),
                                                      vocab.token_id("wonderful")]
        assert vocab.encode("[SSEP]") == [4]
        assert vocab.encode("[ssep]") == [UNK_ID]

    def test_oov_and_empty(self):
        vocab = Vocabulary(RESERVED_TOKENS + ("food",))
        assert vocab.encode("zzz") == [UNK_ID]
        assert vocab.encode("") == []

    def test_decode_skips_specials(self):
        vocab = Vocabulary(RESERVED_TOKENS + ("food",))
        ids = [BOS_ID, vocab.token_id("food"), EOS_ID, PAD_ID]
        assert vocab.decode(ids) == "food"

    def test_bijection(self):
        vocab = Vocabulary(RESERVED_TOKENS + ("a", "b", "c"))
        for i, token in enumerate(vocab.tokens):
            assert vocab.token_id(token) == i

    def test_hash_stability(self):
        a = Vocabulary(RESERVED_TOKENS + ("x",))
        b = Vocabulary(RESERVED_TOKENS + ("x",))
        assert a.content_hash() == b.content_hash()
        assert a.content_hash() != Vocabulary(RESERVED_TOKENS + ("y",)).content_hash()


class TestBuildVocabulary:
    def test_targets_never_oov(self):
        split = generate_synthetic(SyntheticSpec(train=50, dev=0, test=0, seed=1))
        vocab = build_vocabulary(split.train)
        from quadgen.codec import TemplateKind, render
        for example in split.train:
            for kind in (TemplateKind.paraphrase(), TemplateKind.special_symbols(),
                         TemplateKind.gas()):
                ids = vocab.encode(render(list(example.quads), kind).text)
                assert UNK_ID not in ids

    def test_template_surface_words_present(self):
        split = generate_synthetic(SyntheticSpec(train=10, dev=0, test=0, seed=1))
        vocab = build_vocabulary(split.train)
        for word in ("great", "ok", "bad", "it", "null", "because", "is"):
            assert vocab.token_id(word) != UNK_ID


class TestSyntheticGenerator:
    def test_determinism(self):
        spec = SyntheticSpec(train=80, dev=20, test=20, seed=7)
        assert generate_synthetic(spec) == generate_synthetic(spec)

    def test_sizes_and_counts(self):
        split = generate_synthetic(SyntheticSpec(train=80, dev=20, test=20, seed=7))
        counts = split.counts()
        assert counts["train"]["sentences"] == 80
        assert counts["dev"]["sentences"] == 20
        assert counts["test"]["sentences"] == 20
        assert counts["train"]["quads"] >= counts["train"]["sentences"]

    def test_splits_disjoint_by_text(self):
        split = generate_synthetic(SyntheticSpec(train=200, dev=60, test=60, seed=3))
        texts = [e.text for part in (split.train, split.dev, split.test) for e in part]
        assert len(set(texts)) == len(texts)

    def test_gold_consistent_with_surface(self):
        split = generate_synthetic(SyntheticSpec(train=120, dev=0, test=0, seed=5))
        for example in split.train:
            clauses = example.text.split(" and ")
            assert len(clauses) == len(example.quads)
            for clause, quad in zip(clauses, example.quads):
                words = clause.split(" ")
                assert "was" in words
                assert quad.ot == clause.split(" was ")[1]
                if quad.at is None:
                    assert clause.startswith("it was ")
                else:
                    assert clause.startswith(quad.at + " was ")

    def test_opinion_never_mapped_to_polarity_word(self):
        # "service was excellent" must keep ot "excellent", not "great"
        split = generate_synthetic(SyntheticSpec(train=150, dev=0, test=0, seed=9))
        for example in split.train:
            for clause, quad in zip(example.text.split(" and "), example.quads):
                assert quad.ot == clause.split(" was ")[1]

    def test_inventory_too_small(self):
        spec = SyntheticSpec(train=50, dev=0, test=0, seed=1,
                             category_aspects={"a#b": ("x",)},
                             polarity_opinions={"positive": ("nice",)},
                             implicit_aspect_rate=0.0, max_clauses=1)
        with pytest.raises(CorpusError, match="too small"):
            generate_synthetic(spec)

    def test_near_synonym_pairs_present(self):
        from quadgen.corpus import DEFAULT_POLARITY_OPINIONS, DEFAULT_CATEGORY_ASPECTS
        positives = DEFAULT_POLARITY_OPINIONS["positive"]
        assert "excellent" in positives and "great" in positives
        foods = DEFAULT_CATEGORY_ASPECTS["food#quality"]
        assert "food" in foods and "foods" in foods
