"""Template instructions, vocabulary and fixed-length tokenization."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GenerationError, TokenizationError

PAD, UNK = 0, 1
T_MAX = 20
TASK_ONLY_OBJECT = "something"
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize(text: str) -> list[str]:
    """Lowercase, drop punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT).split()


def load_templates(path: str | Path | None = None) -> list[str]:
    """Templates from ``path`` (default: the bundled asset), skipping comments and blanks."""
    if path is None:
        text = resources.files("tograsp").joinpath("assets/templates.txt").read_text()
        where = "bundled templates.txt"
    else:
        text = Path(path).read_text()
        where = str(path)
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        check_template(line, f"{where}:{n}")
        out.append(line)
    if not out:
        raise GenerationError(f"{where} holds no templates")
    return out


def check_template(template: str, where: str = "template") -> None:
    rest = template.replace("{obj}", "").replace("{task}", "")
    if template.count("{task}") != 1 or template.count("{obj}") != 1 or "{" in rest or "}" in rest:
        raise GenerationError(f"{where}: need exactly one {{obj}} and one {{task}}: {template!r}")


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # index i holds the token with id i + 2
    tasks: frozenset[str] = field(default_factory=frozenset)
    categories: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        object.__setattr__(self, "_ids", {t: i + 2 for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens) + 2

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, i: int) -> str:
        if i == PAD:
            return "<pad>"
        if i == UNK:
            return "<unk>"
        return self.tokens[i - 2]

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "tasks": sorted(self.tasks), "categories": sorted(self.categories)}

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["tokens"]), frozenset(d["tasks"]), frozenset(d["categories"]))


def build_vocab(templates: Sequence[str], tasks: Iterable[str], categories: Iterable[str]) -> Vocabulary:
    tasks, categories = sorted(set(tasks)), sorted(set(categories))
    if not templates or not tasks or not categories:
        raise ValueError("build_vocab needs templates, task labels and category labels")
    words: set[str] = {TASK_ONLY_OBJECT}
    for t in templates:
        words.update(normalize(t.replace("{obj}", " ").replace("{task}", " ")))
    for label in (*tasks, *categories):
        words.update(normalize(label))
    return Vocabulary(tuple(sorted(words)), frozenset(tasks), frozenset(categories))


def tokenize(text: str, vocab: Vocabulary, t_max: int = T_MAX) -> np.ndarray:
    if t_max < 4:
        raise TokenizationError(f"T_max must be >= 4, got {t_max}")
    words = normalize(text)
    if not words:
        raise TokenizationError(f"nothing to tokenize in {text!r}")
    ids = np.zeros(t_max, dtype=np.int64)
    for i, w in enumerate(words[:t_max]):
        ids[i] = vocab.id(w)
    return ids


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.token(int(i)) for i in ids if int(i) != PAD)


@dataclass(frozen=True)
class Instruction:
    text: str
    target_task: str
    target_object: str | None
    token_ids: tuple[int, ...]

    @property
    def task_only(self) -> bool:
        return self.target_object is None

    def ids(self) -> np.ndarray:
        return np.asarray(self.token_ids, dtype=np.int64)


def fill_template(template: str, task: str, obj: str | None) -> str:
    if obj is None:
        template = template.replace("the {obj}", TASK_ONLY_OBJECT).replace("{obj}", TASK_ONLY_OBJECT)
    else:
        template = template.replace("{obj}", obj)
    return " ".join(template.replace("{task}", task).lower().split())


def generate_instruction(
    templates: Sequence[str],
    target_task: str,
    target_object: str | None,
    rng: np.random.Generator,
    vocab: Vocabulary,
    t_max: int = T_MAX,
) -> Instruction:
    """Fill a uniformly chosen template; ``target_object=None`` gives the task-only form."""
    if target_task not in vocab.tasks:
        raise GenerationError(f"unknown task label {target_task!r}")
    if target_object is not None and target_object not in vocab.categories:
        raise GenerationError(f"unknown object label {target_object!r}")
    if not templates:
        raise GenerationError("no templates")
    template = templates[int(rng.integers(len(templates)))]
    check_template(template)
    text = fill_template(template, target_task, target_object)
    ids = tokenize(text, vocab, t_max)
    return Instruction(text, target_task, target_object, tuple(int(i) for i in ids))
