import numpy as np
import pytest

from langxfer.synthetic import SyntheticLangSpec, gen_synthetic, vocabulary


def spec(**kw):
    base = dict(tag="a", seed=11, vocab_size=300, byte_range=(0x61, 0x7A))
    base.update(kw)
    return SyntheticLangSpec(**base)


class TestSpecValidation:
    def test_valid(self):
        spec().validate()

    def test_tiny_vocab_rejected(self):
        with pytest.raises(ValueError, match="vocab_size"):
            spec(vocab_size=5).validate()

    def test_newline_in_range_rejected(self):
        with pytest.raises(ValueError, match="0x0A"):
            spec(byte_range=(0x05, 0x20)).validate()

    def test_non_ascii_range_rejected(self):
        with pytest.raises(ValueError, match="ASCII"):
            spec(byte_range=(0x80, 0xFF)).validate()

    def test_overlap_without_parent_rejected(self):
        with pytest.raises(ValueError, match="parent"):
            spec(overlap_fraction=0.5).validate()

    def test_infeasible_vocab(self):
        with pytest.raises(ValueError, match="distinct words"):
            spec(byte_range=(0x61, 0x62), word_length=(1, 2),
                 vocab_size=300).validate()

    def test_roundtrip_dict(self):
        parent = spec(tag="p", seed=5)
        child = spec(tag="c", seed=6, overlap_fraction=0.25, parent=parent)
        again = SyntheticLangSpec.from_dict(child.to_dict())
        assert again == child


class TestVocabulary:
    def test_size_and_uniqueness(self):
        words = vocabulary(spec())
        assert len(words) == 300
        assert len(set(words)) == 300

    def test_full_overlap_with_self_spec(self):
        base = spec()
        child = spec(overlap_fraction=1.0, parent=base)
        assert vocabulary(child) == vocabulary(base)

    def test_partial_overlap_is_rank_aligned_prefix(self):
        parent = spec(tag="p", seed=1)
        child = spec(tag="c", seed=2, overlap_fraction=0.5, parent=parent)
        pw, cw = vocabulary(parent), vocabulary(child)
        assert cw[:150] == pw[:150]
        assert not set(cw[150:]) & set(pw)

    def test_word_bytes_inside_window(self):
        for word in vocabulary(spec(byte_range=(0x41, 0x5A))):
            assert all(0x41 <= b <= 0x5A for b in word.encode())


class TestGenSynthetic:
    def test_reproducible(self):
        s = spec()
        a = gen_synthetic(s, 20_000, seed=3)
        b = gen_synthetic(s, 20_000, seed=3)
        assert a.documents == b.documents
        assert a.total_bytes >= 20_000

    def test_language_tag(self):
        assert gen_synthetic(spec(tag="zzz"), 5_000, seed=0).language == "zzz"

    def test_disjoint_ranges_share_no_content_trigrams(self):
        a = gen_synthetic(spec(tag="a", byte_range=(0x61, 0x7A)), 30_000, seed=1)
        b = gen_synthetic(spec(tag="b", seed=99, byte_range=(0x41, 0x5A)), 30_000, seed=1)

        def content_trigrams(corpus):
            grams = set()
            for doc in corpus.documents:
                raw = doc.encode()
                for i in range(len(raw) - 2):
                    g = raw[i:i + 3]
                    if b" " not in g and b"\n" not in g:
                        grams.add(g)
            return grams

        assert not content_trigrams(a) & content_trigrams(b)

    def test_zipf_rank_frequency_slope(self):
        s = spec(vocab_size=2000, zipf_exponent=1.0)
        corpus = gen_synthetic(s, 1_000_000, seed=7)
        counts: dict[str, int] = {}
        for doc in corpus.documents:
            for word in doc.split():
                counts[word] = counts.get(word, 0) + 1
        freqs = np.sort(np.array(list(counts.values())))[::-1]
        top = freqs[:100].astype(float)
        slope = np.polyfit(np.log(np.arange(1, 101)), np.log(top), 1)[0]
        assert -1.15 <= slope <= -0.85

    def test_nesting_produces_balanced_brackets(self):
        s = spec(nesting_depth=2)
        corpus = gen_synthetic(s, 30_000, seed=5)
        text = "\n".join(corpus.documents)
        assert "(" in text
        depth = 0
        for ch in text:
            depth += (ch == "(") - (ch == ")")
            assert depth >= 0
        assert depth == 0

    def test_no_nesting_when_depth_zero(self):
        corpus = gen_synthetic(spec(nesting_depth=0), 10_000, seed=5)
        assert "(" not in "\n".join(corpus.documents)
