"""Annotated-sentence ingestion, vocabularies and synthetic corpora.

The on-disk corpus format is JSON Lines, one sentence per line:

    {"tokens": [{"surface": "the", "pos": "DT", "head": 2, "deprel": "other"}, ...],
     "comparator_index": 4,
     "glosses": {"2": ["woolly", "farm", "animal"]},
     "label": "simile",
     "tags": ["O", "T", "O", "O", "O", "V"]}

Token indices (comparator, gloss keys, dependency heads) are 1-based;
head 0 marks the dependency root.  Gloss keys are decimal strings because
JSON objects cannot carry integer keys.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_TOKENS = 100

LABEL_SIMILE = "simile"
LABEL_LITERAL = "literal"
TAG_VALUES = ("T", "V", "O")

# POS tags treated as nouns when typing graph nodes and validating glosses.
# Pronouns are deliberately absent.
DEFAULT_NOUN_TAGS = frozenset({"NN", "NR", "NT", "n", "nh", "ns"})

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
CLS_TOKEN = "<cls>"
SEP_TOKEN = "<sep>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)


class CorpusError(ValueError):
    """Raised for malformed corpus records or violated sentence invariants."""


@dataclass(frozen=True)
class TokenAnn:
    """One token with its POS tag and dependency arc (head 0 = root)."""

    surface: str
    pos: str
    head: int
    deprel: str


@dataclass(frozen=True)
class AnnotatedSentence:
    """A fully annotated sentence with exactly one comparator token.

    ``glosses`` maps 1-based noun indices to pre-tokenized definitions;
    the sense analysis producing them happens upstream of this package.
    """

    tokens: tuple[TokenAnn, ...]
    comparator_index: int
    glosses: dict[int, tuple[str, ...]] = field(default_factory=dict)
    label: str = LABEL_LITERAL
    tags: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def is_simile(self) -> bool:
        return self.label == LABEL_SIMILE


def validate_sentence(sent: AnnotatedSentence, where: str = "sentence") -> None:
    """Check every AnnotatedSentence invariant; raise CorpusError naming the field."""
    n = len(sent.tokens)
    if n < 1 or n > MAX_TOKENS:
        raise CorpusError(f"{where}: token count {n} outside [1, {MAX_TOKENS}]")
    if not (1 <= sent.comparator_index <= n):
        raise CorpusError(f"{where}: comparator_index out of range ({sent.comparator_index} for N={n})")
    if sent.label not in (LABEL_SIMILE, LABEL_LITERAL):
        raise CorpusError(f"{where}: label must be 'simile' or 'literal', got {sent.label!r}")
    if len(sent.tags) != n:
        raise CorpusError(f"{where}: tags length {len(sent.tags)} != token count {n}")
    for i, tag in enumerate(sent.tags, start=1):
        if tag not in TAG_VALUES:
            raise CorpusError(f"{where}: tags[{i}] = {tag!r} not in {TAG_VALUES}")
    if sent.label == LABEL_LITERAL and any(t != "O" for t in sent.tags):
        raise CorpusError(f"{where}: literal sentence carries non-O tags")
    for i, tok in enumerate(sent.tokens, start=1):
        if not (0 <= tok.head <= n):
            raise CorpusError(f"{where}: head of token {i} out of range ({tok.head})")
        if tok.head == i:
            raise CorpusError(f"{where}: token {i} depends on itself")
    for idx in sent.glosses:
        if not (1 <= idx <= n):
            raise CorpusError(f"{where}: gloss key {idx} out of range")
        if sent.tokens[idx - 1].pos not in DEFAULT_NOUN_TAGS:
            raise CorpusError(f"{where}: gloss key {idx} points at non-noun POS {sent.tokens[idx - 1].pos!r}")


def sentence_to_record(sent: AnnotatedSentence) -> dict:
    return {
        "tokens": [
            {"surface": t.surface, "pos": t.pos, "head": t.head, "deprel": t.deprel}
            for t in sent.tokens
        ],
        "comparator_index": sent.comparator_index,
        "glosses": {str(k): list(v) for k, v in sorted(sent.glosses.items())},
        "label": sent.label,
        "tags": list(sent.tags),
    }


def sentence_from_record(record: dict, where: str = "record") -> AnnotatedSentence:
    try:
        tokens = tuple(
            TokenAnn(
                surface=str(t["surface"]),
                pos=str(t["pos"]),
                head=int(t["head"]),
                deprel=str(t["deprel"]),
            )
            for t in record["tokens"]
        )
        glosses = {int(k): tuple(str(w) for w in v) for k, v in record.get("glosses", {}).items()}
        sent = AnnotatedSentence(
            tokens=tokens,
            comparator_index=int(record["comparator_index"]),
            glosses=glosses,
            label=str(record["label"]),
            tags=tuple(str(t) for t in record["tags"]),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise CorpusError(f"{where}: malformed field ({err})") from err
    validate_sentence(sent, where)
    return sent


def load_corpus(path) -> list[AnnotatedSentence]:
    """Read a JSON Lines corpus, validating every record.

    Errors carry the 1-based line number of the offending record.
    """
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"line {lineno}: invalid JSON ({err})") from err
            sentences.append(sentence_from_record(record, where=f"line {lineno}"))
    return sentences


def save_corpus(path, sentences: Iterable[AnnotatedSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            fh.write(json.dumps(sentence_to_record(sent), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


@dataclass
class Vocabulary:
    """Token/POS lookup tables plus the frequency-ranked dependency relations.

    Ids 0..3 are reserved (pad, unk, cls-surrogate, sep-surrogate).  The
    relation ranking is frequency-descending with lexicographic tie-break,
    so the top-k cut is stable across runs and platforms.
    """

    token_to_id: dict[str, int]
    pos_to_id: dict[str, int]
    deprel_ranking: list[str]

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def token_id(self, surface: str) -> int:
        return self.token_to_id.get(surface, self.token_to_id[UNK_TOKEN])

    def top_deprels(self, k: int = 8) -> list[str]:
        return self.deprel_ranking[:k]

    def to_json(self) -> dict:
        return {
            "token_to_id": self.token_to_id,
            "pos_to_id": self.pos_to_id,
            "deprel_ranking": self.deprel_ranking,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        return cls(
            token_to_id=dict(payload["token_to_id"]),
            pos_to_id=dict(payload["pos_to_id"]),
            deprel_ranking=list(payload["deprel_ranking"]),
        )


def build_vocab(corpus: Sequence[AnnotatedSentence], min_freq: int = 1) -> Vocabulary:
    """Build the vocabulary from training sentences (gloss tokens included)."""
    if not corpus:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    token_freq: dict[str, int] = {}
    pos_seen: dict[str, None] = {}
    deprel_freq: dict[str, int] = {}
    for sent in corpus:
        for tok in sent.tokens:
            token_freq[tok.surface] = token_freq.get(tok.surface, 0) + 1
            pos_seen.setdefault(tok.pos, None)
            deprel_freq[tok.deprel] = deprel_freq.get(tok.deprel, 0) + 1
        for gloss in sent.glosses.values():
            for word in gloss:
                token_freq[word] = token_freq.get(word, 0) + 1

    token_to_id = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    for surface in sorted(token_freq):
        if token_freq[surface] >= min_freq:
            token_to_id[surface] = len(token_to_id)

    pos_to_id = {UNK_TOKEN: 0}
    for pos in sorted(pos_seen):
        pos_to_id[pos] = len(pos_to_id)

    ranking = sorted(deprel_freq, key=lambda r: (-deprel_freq[r], r))
    return Vocabulary(token_to_id=token_to_id, pos_to_id=pos_to_id, deprel_ranking=ranking)


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_sentences: int
    seed: int = 0
    noise_rate: float = 0.0


# Disjoint semantic categories.  A simile pairs nouns from two different
# categories around the comparator; a literal sentence compares nouns of the
# same category.  Every noun has a fixed pre-tokenized gloss: one adjective
# unique to the noun followed by a two-word category phrase shared by every
# noun of that category, so glosses carry the category signal a learner needs.
# No gloss word reappears in another category or in the sentence word pools.
CATEGORY_NOUNS: dict[str, dict[str, tuple[str, ...]]] = {
    "animal": {
        "sheep": ("woolly", "farm", "animal"),
        "kitten": ("young", "farm", "animal"),
        "puppy": ("playful", "farm", "animal"),
        "pony": ("sturdy", "farm", "animal"),
        "rabbit": ("furry", "farm", "animal"),
        "goat": ("horned", "farm", "animal"),
    },
    "sky": {
        "clouds": ("drifting", "airy", "sky"),
        "stars": ("glittering", "airy", "sky"),
        "moon": ("glowing", "airy", "sky"),
        "snowflakes": ("frozen", "airy", "sky"),
        "mist": ("floating", "airy", "sky"),
        "rainbow": ("arched", "airy", "sky"),
    },
    "water": {
        "river": ("flowing", "wet", "water"),
        "waves": ("restless", "wet", "water"),
        "lake": ("calm", "wet", "water"),
        "stream": ("rushing", "wet", "water"),
        "ocean": ("salty", "wet", "water"),
        "puddle": ("muddy", "wet", "water"),
    },
    "fire": {
        "flames": ("leaping", "hot", "fire"),
        "embers": ("fading", "hot", "fire"),
        "sparks": ("flying", "hot", "fire"),
        "torches": ("burning", "hot", "fire"),
        "candles": ("flickering", "hot", "fire"),
        "lanterns": ("lit", "hot", "fire"),
    },
    "plant": {
        "willow": ("bending", "green", "plant"),
        "moss": ("cushioned", "green", "plant"),
        "ferns": ("curled", "green", "plant"),
        "petals": ("scented", "green", "plant"),
        "reeds": ("swaying", "green", "plant"),
        "clover": ("lucky", "green", "plant"),
    },
    "stone": {
        "pebbles": ("smooth", "hard", "stone"),
        "marble": ("polished", "hard", "stone"),
        "granite": ("gray", "hard", "stone"),
        "boulders": ("heavy", "hard", "stone"),
        "gravel": ("loose", "hard", "stone"),
        "flint": ("sharp", "hard", "stone"),
    },
}

_VERBS = ("looks", "drifts", "glows", "moves", "shines", "sways")
_ADJECTIVES = ("white", "soft", "bright", "quiet", "pale", "wild")
_ADVERBS = ("slowly", "gently", "softly", "today")
_COMPARATORS = ("like", "as")


@dataclass(frozen=True)
class _Template:
    # Seven slot kinds: THE, NOUN_A, NOUN_B, VERB, ADJ, ADV, CMP.
    slots: tuple[str, ...]
    pos: tuple[str, ...]
    heads: tuple[int, ...]
    deprels: tuple[str, ...]
    comparator_index: int

    @property
    def noun_a(self) -> int:
        return self.slots.index("NOUN_A") + 1

    @property
    def noun_b(self) -> int:
        return self.slots.index("NOUN_B") + 1


# Relations are drawn from a fixed small set; trees have depth <= 4 and a
# single root.  The first template reproduces the canonical six-token
# "the sheep look like white clouds" shape.
_TEMPLATES = (
    _Template(
        slots=("THE", "NOUN_A", "VERB", "CMP", "ADJ", "NOUN_B"),
        pos=("DT", "NN", "VV", "CS", "JJ", "NN"),
        heads=(2, 3, 0, 3, 6, 4),
        deprels=("other", "nsubj", "root", "prep", "amod", "pobj"),
        comparator_index=4,
    ),
    _Template(
        slots=("NOUN_A", "VERB", "CMP", "NOUN_B"),
        pos=("NN", "VV", "CS", "NN"),
        heads=(2, 0, 2, 3),
        deprels=("nsubj", "root", "prep", "pobj"),
        comparator_index=3,
    ),
    _Template(
        slots=("NOUN_A", "VERB", "CMP", "ADJ", "NOUN_B"),
        pos=("NN", "VV", "CS", "JJ", "NN"),
        heads=(2, 0, 2, 5, 3),
        deprels=("nsubj", "root", "prep", "amod", "pobj"),
        comparator_index=3,
    ),
    _Template(
        slots=("THE", "NOUN_A", "VERB", "ADV", "CMP", "THE", "NOUN_B"),
        pos=("DT", "NN", "VV", "AD", "CS", "DT", "NN"),
        heads=(2, 3, 0, 3, 3, 7, 5),
        deprels=("other", "nsubj", "root", "advmod", "prep", "other", "pobj"),
        comparator_index=5,
    ),
    _Template(
        slots=("THE", "ADJ", "NOUN_A", "VERB", "CMP", "ADJ", "NOUN_B", "ADV"),
        pos=("DT", "JJ", "NN", "VV", "CS", "JJ", "NN", "AD"),
        heads=(3, 3, 4, 0, 4, 7, 5, 4),
        deprels=("other", "amod", "nsubj", "root", "prep", "amod", "pobj", "advmod"),
        comparator_index=5,
    ),
)


def canonical_sentence(tenor: str = "sheep", vehicle: str = "clouds") -> AnnotatedSentence:
    """The six-token "the sheep looks like white clouds" simile.

    Two noun tokens (indices 2 and 6), comparator at index 4, five non-root
    dependency arcs.  Used by graph oracles and documentation.
    """
    tpl = _TEMPLATES[0]
    return _fill_template(
        tpl,
        noun_a=tenor,
        noun_b=vehicle,
        verb="looks",
        adj="white",
        adv="slowly",
        the="the",
        cmp_word="like",
        simile=True,
        glosses={
            tpl.noun_a: CATEGORY_NOUNS["animal"].get(tenor, ("some", "near", "thing")),
            tpl.noun_b: CATEGORY_NOUNS["sky"].get(vehicle, ("some", "far", "thing")),
        },
    )


def _fill_template(
    tpl: _Template,
    *,
    noun_a: str,
    noun_b: str,
    verb: str,
    adj: str,
    adv: str,
    the: str,
    cmp_word: str,
    simile: bool,
    glosses: dict[int, tuple[str, ...]],
) -> AnnotatedSentence:
    words = {
        "THE": the,
        "NOUN_A": noun_a,
        "NOUN_B": noun_b,
        "VERB": verb,
        "ADJ": adj,
        "ADV": adv,
        "CMP": cmp_word,
    }
    tokens = tuple(
        TokenAnn(surface=words[slot], pos=pos, head=head, deprel=rel)
        for slot, pos, head, rel in zip(tpl.slots, tpl.pos, tpl.heads, tpl.deprels)
    )
    if simile:
        tags = tuple(
            "T" if i == tpl.noun_a else "V" if i == tpl.noun_b else "O"
            for i in range(1, len(tokens) + 1)
        )
    else:
        tags = tuple("O" for _ in tokens)
    return AnnotatedSentence(
        tokens=tokens,
        comparator_index=tpl.comparator_index,
        glosses=dict(glosses),
        label=LABEL_SIMILE if simile else LABEL_LITERAL,
        tags=tags,
    )


def generate_synthetic(config: SyntheticConfig) -> list[AnnotatedSentence]:
    """Deterministic synthetic corpus: ~50% similes, ~50% literal comparisons.

    With probability ``noise_rate`` a sentence's gold label is flipped (tags
    adjusted to keep invariants), simulating annotation noise.
    """
    if config.n_sentences < 2:
        raise CorpusError("n_sentences must be >= 2")
    rng = np.random.default_rng(config.seed)
    categories = sorted(CATEGORY_NOUNS)
    sentences = []
    for _ in range(config.n_sentences):
        tpl = _TEMPLATES[rng.integers(len(_TEMPLATES))]
        simile = bool(rng.random() < 0.5)
        cat_a = categories[rng.integers(len(categories))]
        if simile:
            others = [c for c in categories if c != cat_a]
            cat_b = others[rng.integers(len(others))]
        else:
            cat_b = cat_a
        nouns_a = sorted(CATEGORY_NOUNS[cat_a])
        nouns_b = sorted(CATEGORY_NOUNS[cat_b])
        noun_a = nouns_a[rng.integers(len(nouns_a))]
        noun_b = nouns_b[rng.integers(len(nouns_b))]
        if noun_b == noun_a:
            noun_b = nouns_b[(nouns_b.index(noun_b) + 1) % len(nouns_b)]
        sent = _fill_template(
            tpl,
            noun_a=noun_a,
            noun_b=noun_b,
            verb=_VERBS[rng.integers(len(_VERBS))],
            adj=_ADJECTIVES[rng.integers(len(_ADJECTIVES))],
            adv=_ADVERBS[rng.integers(len(_ADVERBS))],
            the="the",
            cmp_word=_COMPARATORS[rng.integers(len(_COMPARATORS))],
            simile=simile,
            glosses={
                tpl.noun_a: CATEGORY_NOUNS[cat_a][noun_a],
                tpl.noun_b: CATEGORY_NOUNS[cat_b][noun_b],
            },
        )
        if config.noise_rate > 0 and rng.random() < config.noise_rate:
            sent = _flip_label(sent, tpl)
        validate_sentence(sent, "synthetic sentence")
        sentences.append(sent)
    return sentences


def _flip_label(sent: AnnotatedSentence, tpl: _Template) -> AnnotatedSentence:
    if sent.is_simile:
        return AnnotatedSentence(
            tokens=sent.tokens,
            comparator_index=sent.comparator_index,
            glosses=sent.glosses,
            label=LABEL_LITERAL,
            tags=tuple("O" for _ in sent.tokens),
        )
    tags = tuple(
        "T" if i == tpl.noun_a else "V" if i == tpl.noun_b else "O"
        for i in range(1, len(sent.tokens) + 1)
    )
    return AnnotatedSentence(
        tokens=sent.tokens,
        comparator_index=sent.comparator_index,
        glosses=sent.glosses,
        label=LABEL_SIMILE,
        tags=tags,
    )


def split_folds(
    corpus: Sequence[AnnotatedSentence], k: int, seed: int = 0
) -> list[tuple[list[AnnotatedSentence], list[AnnotatedSentence]]]:
    """Shuffle and split into k disjoint folds; returns (train, test) pairs."""
    if k < 2:
        raise CorpusError("k must be >= 2")
    if k > len(corpus):
        raise CorpusError(f"k={k} exceeds corpus size {len(corpus)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    base, extra = divmod(len(corpus), k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(order[start : start + size])
        start += size
    splits = []
    for i in range(k):
        test_idx = set(folds[i].tolist())
        train = [corpus[j] for j in range(len(corpus)) if j not in test_idx]
        test = [corpus[j] for j in sorted(test_idx)]
        splits.append((train, test))
    return splits
