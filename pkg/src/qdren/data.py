"""Story datasets: the bAbI text format, two synthetic desk-scale
generators, vocabulary management, and window preprocessing.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN, build_question_window, build_windows

ENTITY_PREFIX = "@entity"
PLACEHOLDER = "@placeholder"

ENTITY_NAMES = ["mary", "john", "sandra", "daniel", "fred", "bill",
                "julie", "emma", "hannah", "jason", "wolfgang", "yann"]
LOCATION_NAMES = ["kitchen", "garden", "office", "bathroom", "hallway",
                  "bedroom", "park", "school", "cinema", "cellar"]
CLOZE_VERBS = ["visited", "called", "helped", "praised", "blamed",
               "admired", "followed", "avoided"]

_FACT_RE = re.compile(r"^(\d+) (.+)$")
_QUESTION_RE = re.compile(r"^(\d+) (.+\?)\t([^\t]+)\t([\d ]+)$")


class ParseError(ValueError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass
class RawStory:
    """Token-level story before vocabulary encoding."""

    sentences: list[list[str]]
    question: list[str]
    answer: str
    supporting: list[int] | None = None       # 0-based sentence indices
    candidates: list[str] | None = None


@dataclass
class Story:
    """Vocabulary-encoded story, ready for the model."""

    sentences: list[list[int]]
    question: list[int]
    answer: int
    supporting: list[int] | None = None
    candidates: list[int] | None = None       # sorted vocab ids
    raw: RawStory | None = None


class Vocabulary:
    """Dense token↔id map with reserved PAD=0 and UNK=1."""

    def __init__(self, tokens: list[str] | None = None):
        self.tokens = [PAD_TOKEN, UNK_TOKEN]
        self._ids = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for t in tokens or []:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self._ids:
            self._ids[token] = len(self.tokens)
            self.tokens.append(token)
        return self._ids[token]

    def encode(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def decode(self, idx: int) -> str:
        return self.tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __len__(self) -> int:
        return len(self.tokens)

    def to_list(self) -> list[str]:
        return list(self.tokens[2:])

    @classmethod
    def from_list(cls, tokens: list[str]) -> "Vocabulary":
        return cls(tokens)


def build_vocab(datasets, max_size: int) -> Vocabulary:
    """Most frequent tokens kept; frequency ties break lexicographically."""
    if max_size < 3:
        raise ValueError("max_size must be at least 3 (PAD, UNK, one token)")
    counts = Counter()
    for stories in datasets:
        for story in stories:
            for sent in story.sentences:
                counts.update(sent)
            counts.update(story.question)
            counts[story.answer] += 1
            if story.candidates:
                counts.update(story.candidates)
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - 2]]
    return Vocabulary(keep)


def encode_story(raw: RawStory, vocab: Vocabulary) -> Story:
    candidates = None
    if raw.candidates is not None:
        candidates = sorted(vocab.encode(c) for c in raw.candidates)
    return Story(
        sentences=[[vocab.encode(t) for t in s] for s in raw.sentences],
        question=[vocab.encode(t) for t in raw.question],
        answer=vocab.encode(raw.answer),
        supporting=list(raw.supporting) if raw.supporting is not None else None,
        candidates=candidates,
        raw=raw,
    )


# ---------------------------------------------------------------------------
# bAbI format


def _tokenize(text: str) -> list[str]:
    toks = []
    for word in text.split():
        if len(word) > 1 and word[-1] in ".?":
            toks.append(word[:-1])
            toks.append(word[-1])
        else:
            toks.append(word)
    return toks


def parse_babi(stream) -> list[RawStory]:
    """Parse bAbI-layout text into one RawStory per question line.

    Each question closes over all facts of its story so far; a leading
    number that does not increase starts a new story. Lines beginning
    with '#' are comments and skipped.
    """
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in stream]

    stories: list[RawStory] = []
    facts: list[list[str]] = []
    line_to_fact: dict[int, int] = {}
    prev_num = 0

    for ln_no, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("CANDIDATES\t"):
            if not stories:
                raise ParseError("CANDIDATES trailer before any question", ln_no)
            stories[-1].candidates = line.split("\t", 1)[1].split()
            continue
        qm = _QUESTION_RE.match(line)
        fm = _FACT_RE.match(line) if qm is None else None
        if qm is None and fm is None:
            raise ParseError(f"unrecognized line {line!r}", ln_no)
        num = int((qm or fm).group(1))
        if num <= prev_num:
            facts = []
            line_to_fact = {}
        prev_num = num

        if qm is not None:
            question = _tokenize(qm.group(2))
            answer = qm.group(3).strip()
            try:
                supports = [line_to_fact[int(s)] for s in qm.group(4).split()]
            except KeyError as e:
                raise ParseError(f"supporting line {e.args[0]} is not a fact", ln_no) from None
            stories.append(RawStory(
                sentences=[list(s) for s in facts],
                question=question,
                answer=answer,
                supporting=supports,
            ))
        else:
            line_to_fact[num] = len(facts)
            facts.append(_tokenize(fm.group(2)))
    return stories


def serialize_babi(stories: list[RawStory], header: str | None = None) -> str:
    """Write stories back to the bAbI layout (CANDIDATES trailer when present)."""
    out = []
    if header:
        out.extend("# " + ln for ln in header.splitlines())
    for story in stories:
        num = 1
        fact_lines = {}
        for i, sent in enumerate(story.sentences):
            fact_lines[i] = num
            out.append(f"{num} {' '.join(sent)}")
            num += 1
        supports = " ".join(str(fact_lines[i]) for i in (story.supporting or []))
        question = " ".join(story.question)
        out.append(f"{num} {question}\t{story.answer}\t{supports}")
        if story.candidates is not None:
            out.append("CANDIDATES\t" + " ".join(story.candidates))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Synthetic generators


def gen_single_fact(seed: int, n_stories: int, entities: int, locations: int,
                    story_len: int = 5) -> list[RawStory]:
    """Desk-scale where-is-X task: a random walk of movement facts per story,
    question about one mentioned entity, answer its latest location.
    """
    if entities < 2 or locations < 2:
        raise ValueError("need at least 2 entities and 2 locations")
    if entities > len(ENTITY_NAMES) or locations > len(LOCATION_NAMES):
        raise ValueError("not enough built-in names for the requested sizes")
    rng = np.random.default_rng(seed)
    names = ENTITY_NAMES[:entities]
    places = LOCATION_NAMES[:locations]
    stories = []
    for _ in range(n_stories):
        last_seen: dict[str, tuple[str, int]] = {}
        sentences = []
        for i in range(story_len):
            who = names[rng.integers(entities)]
            where = places[rng.integers(locations)]
            sentences.append([who, "moved", "to", "the", where, "."])
            last_seen[who] = (where, i)
        asked = sorted(last_seen)[rng.integers(len(last_seen))]
        answer, support = last_seen[asked]
        stories.append(RawStory(
            sentences=sentences,
            question=["where", "is", asked, "?"],
            answer=answer,
            supporting=[support],
        ))
    return stories


def gen_entity_cloze(seed: int, n_stories: int, n_entities: int,
                     n_facts: int = 6) -> list[RawStory]:
    """Synthetic cloze task over anonymized entity ids.

    Each story is a set of relational facts "@entityA verb @entityB";
    the question hides the subject of one fact behind @placeholder.
    (verb, object) pairs are unique within a story, so answers are
    unambiguous. Entity ids are permuted per story so they carry no
    global information.
    """
    if n_entities < 3:
        raise ValueError("need at least 3 entities")
    rng = np.random.default_rng(seed)
    stories = []
    n_facts = min(n_facts, n_entities * (n_entities - 1))
    for _ in range(n_stories):
        perm = rng.permutation(n_entities)
        name = [f"{ENTITY_PREFIX}{perm[i]}" for i in range(n_entities)]
        pairs = set()
        facts = []
        while len(facts) < n_facts:
            verb = CLOZE_VERBS[rng.integers(len(CLOZE_VERBS))]
            subj, obj = rng.choice(n_entities, size=2, replace=False)
            if (verb, obj) in pairs:
                continue
            pairs.add((verb, obj))
            facts.append((int(subj), verb, int(obj)))
        qi = int(rng.integers(len(facts)))
        subj, verb, obj = facts[qi]
        present = sorted({e for s, _, o in facts for e in (s, o)})
        stories.append(RawStory(
            sentences=[[name[s], v, name[o], "."] for s, v, o in facts],
            question=[PLACEHOLDER, verb, name[obj], "?"],
            answer=name[subj],
            supporting=[qi],
            candidates=sorted(name[e] for e in present),
        ))
    return stories


# ---------------------------------------------------------------------------
# Window preprocessing (cloze input style)


def story_to_windows(raw: RawStory, b: int) -> RawStory:
    """Rewrite a story so each 'sentence' is the b-token window around one
    entity-marker occurrence, and the question is the placeholder window.
    """
    tokens = [t for sent in raw.sentences for t in sent]
    positions = [i for i, t in enumerate(tokens) if t.startswith(ENTITY_PREFIX)]
    windows = build_windows(tokens, positions, b)
    qwin = build_question_window(raw.question, PLACEHOLDER, b)
    return replace(raw, sentences=windows, question=qwin)


def apply_input_style(stories: list[RawStory], input_style: str, b: int) -> list[RawStory]:
    if input_style == "sentences":
        return stories
    if input_style == "windows":
        return [story_to_windows(s, b) for s in stories]
    raise ValueError(f"unknown input style {input_style!r}")


@dataclass
class SplitDataset:
    """Train/valid/test stories after vocabulary encoding."""

    train: list[Story]
    valid: list[Story]
    test: list[Story]
    vocab: Vocabulary
    max_sentence_len: int = field(init=False)
    max_question_len: int = field(init=False)

    def __post_init__(self):
        all_stories = self.train + self.valid + self.test
        self.max_sentence_len = max(
            (len(s) for st in all_stories for s in st.sentences), default=1)
        self.max_question_len = max(
            (len(st.question) for st in all_stories), default=1)


def prepare_dataset(train_raw, valid_raw, test_raw=(), input_style="sentences",
                    window=3, max_vocab=50000) -> SplitDataset:
    """Window-transform (if requested), build the vocabulary on the training
    split, and encode all splits."""
    splits = [apply_input_style(list(s), input_style, window)
              for s in (train_raw, valid_raw, test_raw)]
    vocab = build_vocab(splits, max_vocab)
    enc = [[encode_story(r, vocab) for r in split] for split in splits]
    return SplitDataset(train=enc[0], valid=enc[1], test=enc[2], vocab=vocab)
