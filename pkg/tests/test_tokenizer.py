from __future__ import annotations

import hypothesis.strategies as st
from hypothesis import given

from maintgen.tokenizer import (
    SPECIALS,
    Tokenizer,
    build_vocab,
    join_tokens,
    split_text,
)


def make_tokenizer() -> Tokenizer:
    return build_vocab(["check the fuel pump now .", "replace pump filter"])


def test_split_keeps_punctuation_as_tokens():
    assert split_text("Check fuel pump.") == ["check", "fuel", "pump", "."]


def test_split_empty():
    assert split_text("") == []
    assert split_text("   \n\t ") == []


def test_encode_known_words():
    tok = make_tokenizer()
    ids = tok.encode("Check fuel pump.")
    assert len(ids) == 4
    assert all(i != tok.unk_id for i in ids)


def test_unknown_word_maps_to_unk():
    tok = make_tokenizer()
    assert tok.encode("zzxqv") == [tok.unk_id]


def test_encode_empty():
    assert make_tokenizer().encode("") == []


def test_decode_round_trip_up_to_normalization():
    tok = make_tokenizer()
    assert tok.decode(tok.encode("Check the FUEL pump.")) == "check the fuel pump."


def test_decode_drops_specials():
    tok = make_tokenizer()
    ids = [tok.bos_id] + tok.encode("fuel pump") + [tok.eos_id]
    assert tok.decode(ids) == "fuel pump"


def test_ids_dense_and_specials_present():
    tok = make_tokenizer()
    assert sorted(tok.vocab.values()) == list(range(tok.size))
    for special in SPECIALS:
        assert special in tok.vocab


def test_vocab_save_load_round_trip(tmp_path):
    tok = make_tokenizer()
    tok.save(tmp_path / "vocab.json")
    loaded = Tokenizer.load(tmp_path / "vocab.json")
    assert loaded.vocab == tok.vocab


def test_build_vocab_deterministic():
    texts = ["b b a a", "c a"]
    assert build_vocab(texts).vocab == build_vocab(texts).vocab


def test_build_vocab_respects_max_size():
    texts = [" ".join(f"w{i}" for i in range(100))]
    tok = build_vocab(texts, max_size=20)
    assert tok.size == 20


@given(st.text(alphabet=st.characters(whitelist_categories=("Ll", "Nd", "Po", "Zs")),
               max_size=80))
def test_join_split_stable(text):
    tokens = split_text(text)
    assert split_text(join_tokens(tokens)) == tokens
