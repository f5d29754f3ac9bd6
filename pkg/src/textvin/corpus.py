"""Entity-aligned text descriptions: tokenizer, vocabulary, corpus file I/O.

Human-written descriptions are not shipped, so :func:`generate_synthetic_corpus`
produces four "annotators" worth of behaviour-conditioned sentences per entity.
They describe dynamics (how an entity moves, what contact does) and never
tell the player what to do.
"""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import AVATAR, STILL

UNK = "<unk>"
MAX_TOKENS = 22
REFERENCE_UNIQUE_WORD_TYPES = 286
REFERENCE_AVG_WORDS = 8.65

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# token-level markers of strategy advice; synthetic text must contain none
INSTRUCTIVE_MARKERS = frozenset(
    {"you", "your", "avoid", "should", "must", "dont", "never", "always"})
IMPERATIVE_OPENERS = frozenset(
    {"go", "move", "get", "collect", "run", "stay", "touch", "find", "reach",
     "grab", "use", "kill", "catch", "dodge", "escape", "head", "walk", "take"})


class EmptyText(ValueError):
    pass


class MissingTemplate(KeyError):
    pass


def tokenize(text):
    """Lowercase, drop punctuation, split on whitespace."""
    tokens = _TOKEN_RE.findall(text.lower().replace("'", ""))
    if not tokens:
        raise EmptyText(f"no tokens in {text!r}")
    return tokens


def is_instructive(tokens):
    return bool(INSTRUCTIVE_MARKERS.intersection(tokens)) or tokens[0] in IMPERATIVE_OPENERS


@dataclass(frozen=True)
class Description:
    entity_symbol: str
    text: tuple[str, ...]
    annotator_id: int

    def __post_init__(self):
        if not self.text:
            raise EmptyText(f"empty description for {self.entity_symbol!r}")
        if len(self.text) > MAX_TOKENS:
            raise ValueError(
                f"description for {self.entity_symbol!r} has {len(self.text)} tokens "
                f"(max {MAX_TOKENS})")
        object.__setattr__(self, "text", tuple(self.text))

    @property
    def sentence(self):
        return " ".join(self.text)


@dataclass(frozen=True)
class Corpus:
    descriptions: tuple[Description, ...]
    vocab: dict = field(compare=False)

    def __post_init__(self):
        seen = set()
        for d in self.descriptions:
            key = (d.entity_symbol, d.annotator_id)
            if key in seen:
                raise ValueError(f"two descriptions for entity/annotator {key}")
            seen.add(key)
        index = {}
        for d in self.descriptions:
            index.setdefault(d.entity_symbol, {})[d.annotator_id] = d
        object.__setattr__(self, "_index", index)

    def index(self, token):
        return self.vocab.get(token, 0)

    def encode(self, tokens):
        return [self.index(t) for t in tokens]

    def for_entity(self, symbol, annotators=None):
        """Descriptions of ``symbol`` sorted by annotator id."""
        per = self._index.get(symbol, {})
        ids = sorted(per if annotators is None else set(per) & set(annotators))
        return [per[i] for i in ids]

    def symbols(self):
        return sorted(self._index)

    def subset(self, annotators):
        keep = set(annotators)
        return build_vocab([d for d in self.descriptions if d.annotator_id in keep])

    def merged(self, other):
        return build_vocab(list(self.descriptions) + [
            d for d in other.descriptions
            if lookup(self, d.entity_symbol, d.annotator_id) is None])

    def stats(self, domains=None):
        """Corpus-level statistics comparable to the published corpus table."""
        lengths = [len(d.text) for d in self.descriptions]
        n_domains = domains or 1
        return {
            "unique_word_types": len(self.vocab) - 1,
            "avg_words_per_sentence": float(np.mean(lengths)) if lengths else 0.0,
            "avg_sentences_per_domain": len(lengths) / n_domains,
            "max_sentence_length": max(lengths, default=0),
            "reference_unique_word_types": REFERENCE_UNIQUE_WORD_TYPES,
            "reference_avg_words_per_sentence": REFERENCE_AVG_WORDS,
        }


def build_vocab(descs):
    """Corpus with a sorted vocabulary; index 0 is reserved for unknown tokens."""
    descs = list(descs)
    words = sorted({t for d in descs for t in d.text})
    vocab = {UNK: 0}
    for i, w in enumerate(words, start=1):
        vocab[w] = i
    return Corpus(tuple(descs), vocab)


def lookup(corpus, entity_symbol, annotator_id):
    """The aligned description, or ``None`` when the entity has none."""
    if corpus is None:
        return None
    return corpus._index.get(entity_symbol, {}).get(annotator_id)


# ---------------------------------------------------------------------------
# file format: symbol<TAB>annotator<TAB>text
# ---------------------------------------------------------------------------


def write_corpus(corpus, path):
    lines = [f"{d.entity_symbol}\t{d.annotator_id}\t{d.sentence}\n"
             for d in sorted(corpus.descriptions,
                             key=lambda d: (d.entity_symbol, d.annotator_id))]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_corpus(path):
    descs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        symbol, ann, text = parts
        descs.append(Description(symbol, tuple(tokenize(text)), int(ann)))
    return build_vocab(descs)


# ---------------------------------------------------------------------------
# synthetic descriptions
# ---------------------------------------------------------------------------

_SLOW = ("slowly", "lazily", "gradually")
_FAST = ("quickly", "rapidly", "fast")

_DIR_WORDS = {
    "left": ("to the left", "from right to left", "leftward"),
    "right": ("to the right", "from left to right", "rightward"),
    "up": ("upwards", "toward the top", "up"),
    "down": ("downwards", "toward the bottom", "down"),
}


@dataclass(frozen=True)
class TemplateSet:
    """Phrase families keyed by behaviour and by contact effect."""

    motion: dict
    effect: dict
    colors: tuple = ("red", "blue", "green", "yellow", "purple", "orange", "grey",
                     "brown", "white", "black", "pink", "golden", "silver", "tan")
    openers: tuple = ("a", "the", "this")


DEFAULT_TEMPLATES = TemplateSet(
    motion={
        "static": ("stays in one place", "does not move", "sits still",
                   "remains stationary"),
        "resource": ("lies on the ground", "sits in place", "rests on the floor"),
        "door": ("is an exit door", "is the way out of the level", "is a closed exit"),
        "horizontal-patrol": ("moves {dir}", "moves horizontally", "travels left and right",
                              "goes side to side"),
        "vertical-patrol": ("moves {dir}", "moves vertically", "travels up and down",
                            "goes up and down"),
        "random-walk": ("wanders around randomly", "moves at random", "roams aimlessly",
                        "moves in random directions"),
        "chaser": ("chases the player", "follows the player around", "pursues the avatar",
                   "chases after the player"),
        "fleer": ("runs away from the player", "flees from the avatar",
                  "keeps away from the player", "moves away from the avatar"),
        "shooter": ("shoots bullets {dir}", "fires projectiles {dir}",
                    "launches shots {dir}"),
        "friend": ("wanders around", "walks around slowly", "drifts around the map"),
        "enemy": ("wanders around", "prowls around the map", "walks around randomly"),
    },
    effect={
        "friend": ("and is friendly", "and is a friend of the player",
                   "and greets the player", "and is friendly to the avatar"),
        "enemy": ("and kills the player", "and is hostile", "and is an enemy of the player",
                  "and is deadly to the avatar"),
        "goal": ("and ends the level when reached", "and marks the finish",
                 "and is the destination"),
        "pickup": ("and gets picked up", "and can be collected", "and gives points"),
        "dig": ("and disappears when touched", "and can be dug through"),
        "wall": ("and blocks movement", "and cannot be crossed"),
        "none": ("",),
    },
)


def _effect_kind(d):
    i = d.interaction
    if d.solid:
        return "wall"
    if i.terminate and i.reward <= 0 and (i.reward < 0 or d.behavior != "door"):
        return "enemy"
    if i.terminate and i.reward > 0:
        return "goal"
    if d.is_friend:
        return "friend"
    if i.consume and i.reward > 0:
        return "pickup"
    if i.consume:
        return "dig"
    if i.reward < 0:
        return "enemy"
    return "none"


def _noun(symbol):
    m = re.match(r"[A-Za-z]+", symbol)
    return (m.group(0) if m else symbol).lower()


def _entity_seed(seed, symbol, annotator):
    return [seed, zlib.crc32(symbol.encode()), annotator]


def describe_entity(d, annotator, templates=DEFAULT_TEMPLATES, seed=0):
    """One synthetic sentence for entity definition ``d`` from one annotator."""
    if d.behavior not in templates.motion:
        raise MissingTemplate(d.behavior)
    kind = _effect_kind(d)
    if kind not in templates.effect:
        raise MissingTemplate(kind)
    rng = np.random.default_rng(_entity_seed(seed, d.symbol, annotator))
    color = templates.colors[zlib.crc32(d.symbol.encode()) % len(templates.colors)]
    noun = _noun(d.symbol)

    def pick(options):
        return options[int(rng.integers(len(options)))]

    motion = pick(templates.motion[d.behavior])
    if "{dir}" in motion:
        motion = motion.format(dir=pick(_DIR_WORDS[d.direction or "right"]))
    if d.behavior not in STILL and rng.random() < 0.5:
        motion = f"{pick(_SLOW if d.speed < 1 else _FAST)} {motion}"
    effect = pick(templates.effect[kind])
    opener = pick(templates.openers)
    form = int(rng.integers(4)) if effect else 0
    if form == 0:
        words = f"{opener} {color} {noun} that {motion}"
    elif form == 1:
        words = f"{opener} {noun} {motion} {effect}"
    elif form == 2:
        words = f"this {noun} {effect[4:]}" if effect.startswith("and is") else \
            f"{opener} {noun} that {effect[4:]}"
    else:
        words = f"{opener} {color} {noun} that {motion} {effect}"
    return tuple(tokenize(words))


def generate_synthetic_corpus(specs, templates=DEFAULT_TEMPLATES, seed=0,
                              annotators=(1, 2, 3, 4)):
    """Four behaviour-conditioned descriptions per entity across ``specs``."""
    seen = {}
    for spec in specs:
        for d in spec.entities:
            seen.setdefault(d.symbol, d)
    descs = []
    for symbol in sorted(seen):
        if symbol == AVATAR:
            continue
        for ann in annotators:
            descs.append(Description(symbol, describe_entity(seen[symbol], ann,
                                                             templates, seed), ann))
    return build_vocab(descs)
