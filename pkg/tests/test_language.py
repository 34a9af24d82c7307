import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tograsp.errors import GenerationError, TokenizationError
from tograsp.language import (
    PAD,
    UNK,
    build_vocab,
    detokenize,
    fill_template,
    generate_instruction,
    load_templates,
    normalize,
    tokenize,
)
from tograsp.synth import all_tasks, default_categories

CATS = default_categories()
TASKS = all_tasks(CATS)
NAMES = [c.name for c in CATS]
TEMPLATES = load_templates()
VOCAB = build_vocab(TEMPLATES, TASKS, NAMES)


def test_bundled_templates():
    assert len(TEMPLATES) == 33
    assert "hold the {obj} in your hand and {task}" in TEMPLATES


def test_template_file_checks(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("# comment\n\nuse {obj} for {task}\n")
    assert load_templates(p) == ["use {obj} for {task}"]
    p.write_text("use {obj} for {task} and {task}\n")
    with pytest.raises(GenerationError):
        load_templates(p)


def test_fill_examples():
    assert fill_template("use the {obj} to {task}", "cut", "knife") == "use the knife to cut"
    text = fill_template("use the {obj} to {task}", "scoop", None)
    assert "something" in text and not set(text.split()) & set(NAMES)


def test_generate_object_and_task_only_forms():
    rng = np.random.default_rng(0)
    ins = generate_instruction(["use the {obj} to {task}"], "cut", "knife", rng, VOCAB)
    assert ins.text == "use the knife to cut"
    assert ins.target_object == "knife" and not ins.task_only
    assert len(ins.token_ids) == 20
    for _ in range(50):
        ins = generate_instruction(TEMPLATES, "scoop", None, rng, VOCAB)
        assert "something" in ins.text.split()
        assert not set(ins.text.split()) & set(NAMES)


def test_generate_is_deterministic_and_uses_every_template():
    a = [generate_instruction(TEMPLATES, "stir", "spoon", np.random.default_rng(5), VOCAB).text for _ in range(3)]
    assert len(set(a)) == 1
    rng = np.random.default_rng(1)
    seen = {generate_instruction(TEMPLATES, "stir", "spoon", rng, VOCAB).text for _ in range(600)}
    assert len(seen) == len(TEMPLATES)


def test_generate_rejects_unknown_labels():
    rng = np.random.default_rng(0)
    with pytest.raises(GenerationError):
        generate_instruction(TEMPLATES, "juggle", "knife", rng, VOCAB)
    with pytest.raises(GenerationError):
        generate_instruction(TEMPLATES, "cut", "chainsaw", rng, VOCAB)


def test_tokenize_examples():
    ids = tokenize("Use the knife to cut", VOCAB, 20)
    assert (ids[:5] > 1).all() and (ids[5:] == PAD).all()
    assert tokenize("use the zither to cut", VOCAB)[2] == UNK
    assert (tokenize("Use, the KNIFE!", VOCAB) == tokenize("use the knife", VOCAB)).all()
    assert len(tokenize(" ".join(["cut"] * 50), VOCAB, 8)) == 8


def test_tokenize_errors():
    with pytest.raises(TokenizationError):
        tokenize("  ?! ", VOCAB)
    with pytest.raises(TokenizationError):
        tokenize("cut", VOCAB, 3)


@given(st.lists(st.integers(1, len(VOCAB) - 1), min_size=1, max_size=20))
def test_round_trip_pad_free(ids):
    ids = np.array(ids + [PAD] * (20 - len(ids)))
    assert (tokenize(detokenize(ids, VOCAB), VOCAB, 20) == ids).all()


def test_vocab_build_properties():
    again = build_vocab(list(reversed(TEMPLATES)), reversed(TASKS), NAMES)
    assert again.tokens == VOCAB.tokens
    for label in TASKS + NAMES:
        assert UNK not in tokenize(label, VOCAB)
    distinct = {w for t in TEMPLATES for w in normalize(t.replace("{obj}", " ").replace("{task}", " "))}
    distinct |= {w for label in TASKS + NAMES for w in normalize(label)} | {"something"}
    assert len(VOCAB) == len(distinct) + 2
    assert len({VOCAB.id(t) for t in VOCAB.tokens}) == len(VOCAB.tokens)
    with pytest.raises(ValueError):
        build_vocab([], TASKS, NAMES)


def test_vocab_json_round_trip():
    from tograsp.language import Vocabulary

    assert Vocabulary.from_json(VOCAB.to_json()) == VOCAB
