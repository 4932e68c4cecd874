"""Synthetic multilingual parallel corpora.

A centric language is produced by a small template grammar. Every other
language is a deterministic rewrite of centric sentences: a token bijection
(a permutation of the centric inventory, rendered with a language prefix),
optional stem+suffix splits that lengthen sentences, optional function-word
insertion, and a block-reversal reordering. Because each derived sentence is a
pure function of its centric sentence, sentences derived from the same
centric source are mutual translations, which is what zero-shot test sets use.

Files follow ``<split>.<src>-<tgt>.<side>`` with one space-separated sentence
per line. Zero-shot test files also carry the centric source as a third side
(``test.it-nl.en``) so the gold interlingua length is known.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)


# ---------------------------------------------------------------------------
# grammar
# ---------------------------------------------------------------------------


@dataclass
class GrammarConfig:
    nouns: int = 16
    verbs: int = 10
    adjectives: int = 10
    adverbs: int = 6
    prepositions: int = 6
    determiners: int = 3
    min_len: int = 3
    max_len: int = 13
    length_weights: list[float] | None = None  # over min_len..max_len; uniform if None

    def inventory(self) -> list[str]:
        parts = [("n", self.nouns), ("v", self.verbs), ("a", self.adjectives),
                 ("r", self.adverbs), ("p", self.prepositions), ("d", self.determiners)]
        return [f"{tag}{i:02d}" for tag, n in parts for i in range(n)]

    def length_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        lengths = np.arange(self.min_len, self.max_len + 1)
        if self.length_weights is None:
            w = np.ones(lengths.size)
        else:
            w = np.asarray(self.length_weights, dtype=float)
            if w.size != lengths.size or (w < 0).any() or w.sum() <= 0:
                raise DataError("length_weights must give one nonnegative weight per length")
        return lengths, w / w.sum()

    def validate(self) -> None:
        if self.min_len < 3:
            raise DataError("sentences need at least subject, verb and object (min_len >= 3)")
        if self.max_len > 20:
            raise DataError("the template grammar cannot build sentences longer than 20 tokens")
        if self.min_len > self.max_len:
            raise DataError("min_len exceeds max_len")
        self.length_distribution()


def _plan_template(target: int, rng: np.random.Generator):
    """Choose optional slots to reach ``target`` tokens; None on a dead end."""
    nps = [[False, 0], [False, 0]]  # each NP: [has_det, n_adj]
    pps = 0
    adverb = False
    size = 3
    while size < target:
        room = target - size
        options = []
        if not adverb:
            options.append("adv")
        if pps < 2 and room >= 2:
            options.append("pp")
        for i, np_ in enumerate(nps):
            if not np_[0]:
                options.append(("det", i))
            if np_[1] < 2:
                options.append(("adj", i))
        if not options:
            return None
        choice = options[int(rng.integers(len(options)))]
        if choice == "adv":
            adverb = True
            size += 1
        elif choice == "pp":
            pps += 1
            nps.append([False, 0])
            size += 2
        elif choice[0] == "det":
            nps[choice[1]][0] = True
            size += 1
        else:
            nps[choice[1]][1] += 1
            size += 1
    return nps, adverb


def generate_centric_sentence(grammar: GrammarConfig, rng: np.random.Generator) -> list[str]:
    """Sample a length from the configured distribution, then fill the template to it.

    Template: ``NP verb NP (prep NP){0,2} adverb?`` where ``NP = det? adj{0,2} noun``.
    """
    lengths, probs = grammar.length_distribution()
    target = int(rng.choice(lengths, p=probs))

    def word(tag: str, n: int) -> str:
        return f"{tag}{int(rng.integers(n)):02d}"

    while True:
        plan = _plan_template(target, rng)
        if plan is not None:
            nps, adverb = plan
            break

    def render_np(spec) -> list[str]:
        out = [word("d", grammar.determiners)] if spec[0] else []
        out += [word("a", grammar.adjectives) for _ in range(spec[1])]
        return out + [word("n", grammar.nouns)]

    sent = render_np(nps[0]) + [word("v", grammar.verbs)] + render_np(nps[1])
    for spec in nps[2:]:
        sent += [word("p", grammar.prepositions)] + render_np(spec)
    if adverb:
        sent.append(word("r", grammar.adverbs))
    return sent


# ---------------------------------------------------------------------------
# derived languages
# ---------------------------------------------------------------------------


@dataclass
class SyntheticLanguageSpec:
    language: str
    prefix: str = ""
    bijection_seed: int | None = None  # None: identity mapping
    split_fraction: float = 0.0
    split_seed: int = 0
    n_suffixes: int = 3
    reorder_block: int = 1  # reverse consecutive blocks of this many tokens; 1 = keep order
    insert_rate: float = 0.0

    def fn_word(self) -> str:
        return f"{self.prefix}~fn"

    def suffixes(self) -> list[str]:
        return [f"{self.prefix}~{j}" for j in range(self.n_suffixes)]


class LanguageRewriter:
    """Precomputed tables for :func:`derive_language` and :func:`invert_language`."""

    def __init__(self, spec: SyntheticLanguageSpec, inventory: Sequence[str]):
        self.spec = spec
        inv = list(inventory)
        if spec.bijection_seed is None:
            perm = np.arange(len(inv))
        else:
            perm = np.random.default_rng(spec.bijection_seed).permutation(len(inv))
        self.forward = {t: spec.prefix + inv[int(perm[i])] for i, t in enumerate(inv)}
        self.backward = {v: k for k, v in self.forward.items()}
        n_split = int(round(spec.split_fraction * len(inv)))
        rng = np.random.default_rng(spec.split_seed)
        chosen = rng.choice(len(inv), size=n_split, replace=False) if n_split else []
        suffixes = spec.suffixes()
        self.splits = {self.forward[inv[int(i)]]: suffixes[int(i) % max(1, len(suffixes))]
                       for i in chosen}
        self.markers = set(suffixes) | {spec.fn_word()}

    def surface_tokens(self) -> list[str]:
        toks = list(self.forward.values())
        if self.splits:
            toks += self.spec.suffixes()
        if self.spec.insert_rate > 0:
            toks.append(self.spec.fn_word())
        return toks


def _reorder(tokens: list[str], block: int) -> list[str]:
    if block <= 1:
        return list(tokens)
    out = []
    for i in range(0, len(tokens), block):
        out.extend(reversed(tokens[i:i + block]))
    return out


def _insert_here(sentence: Sequence[str], position: int, rate: float) -> bool:
    key = (" ".join(sentence) + f"#{position}").encode()
    return zlib.crc32(key) / 2**32 < rate


def derive_language(centric_tokens: Sequence[str], rewriter: LanguageRewriter) -> list[str]:
    """Bijection, then splits, then function words, then reordering."""
    spec = rewriter.spec
    out: list[str] = []
    for i, t in enumerate(centric_tokens):
        try:
            s = rewriter.forward[t]
        except KeyError:
            raise DataError(f"token {t!r} is outside the centric inventory") from None
        out.append(s)
        if s in rewriter.splits:
            out.append(rewriter.splits[s])
        if spec.insert_rate > 0 and _insert_here(centric_tokens, i, spec.insert_rate):
            out.append(spec.fn_word())
    return _reorder(out, spec.reorder_block)


def invert_language(tokens: Sequence[str], rewriter: LanguageRewriter) -> list[str]:
    """Undo :func:`derive_language`: reorder back, drop markers, invert the bijection."""
    ordered = _reorder(list(tokens), rewriter.spec.reorder_block)
    return [rewriter.backward[t] for t in ordered if t not in rewriter.markers]


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def tag_token(language: str) -> str:
    return f"<{language}>"


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate tokens in vocabulary")
        for s in SPECIALS:
            if s not in self.index:
                raise DataError(f"vocabulary lacks special token {s}")

    @classmethod
    def build(cls, languages: Sequence[str], surface: Iterable[str]) -> "Vocab":
        tags = [tag_token(lang) for lang in languages]
        seen = set(SPECIALS) | set(tags)
        rest = sorted(t for t in set(surface) if t not in seen)
        return cls(list(SPECIALS) + tags + rest)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def tag_id(self, language: str) -> int:
        try:
            return self.index[tag_token(language)]
        except KeyError:
            raise DataError(f"no language tag for {language!r}") from None

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        try:
            return tuple(self.index[t] for t in tokens)
        except KeyError as exc:
            raise DataError(f"unknown token {exc.args[0]!r}") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


# ---------------------------------------------------------------------------
# corpus construction
# ---------------------------------------------------------------------------


def default_languages() -> list[SyntheticLanguageSpec]:
    return [
        SyntheticLanguageSpec("it", "it:", bijection_seed=11, split_fraction=0.35,
                              split_seed=21, reorder_block=2),
        SyntheticLanguageSpec("nl", "nl:", bijection_seed=12, split_fraction=0.3,
                              split_seed=22, reorder_block=3),
        SyntheticLanguageSpec("ro", "ro:", bijection_seed=13, split_fraction=0.4,
                              split_seed=23, reorder_block=1),
    ]


@dataclass
class CorpusConfig:
    centric: str = "en"
    grammar: GrammarConfig = field(default_factory=GrammarConfig)
    languages: list[SyntheticLanguageSpec] = field(default_factory=default_languages)
    train_per_language: int = 3334
    valid_per_language: int = 100
    test_per_language: int = 100
    zero_shot_test: int = 100
    seed: int = 1234

    @property
    def all_languages(self) -> list[str]:
        return [self.centric] + [s.language for s in self.languages]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusConfig":
        data = dict(data)
        if "grammar" in data:
            data["grammar"] = GrammarConfig(**data["grammar"])
        if "languages" in data:
            data["languages"] = [SyntheticLanguageSpec(**s) for s in data["languages"]]
        return cls(**data)

    @classmethod
    def load(cls, path) -> "CorpusConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"cannot read corpus config {path}: {exc}") from exc


@dataclass(frozen=True)
class SentencePair:
    src: tuple[int, ...]
    tgt: tuple[int, ...]
    src_lang: str
    tgt_lang: str
    centric_len: int


@dataclass
class Corpus:
    root: Path
    config: CorpusConfig
    vocab: Vocab

    def pairs(self, split: str, src: str, tgt: str) -> list[SentencePair]:
        return read_pairs(self.root, split, src, tgt, self.vocab, self.config.centric)

    def supervised_directions(self) -> list[tuple[str, str]]:
        c = self.config.centric
        out = []
        for s in self.config.languages:
            out += [(c, s.language), (s.language, c)]
        return out

    def zero_shot_directions(self) -> list[tuple[str, str]]:
        langs = [s.language for s in self.config.languages]
        return [(a, b) for a, b in permutations(langs, 2)]

    def split_pairs(self, split: str) -> list[SentencePair]:
        out: list[SentencePair] = []
        for src, tgt in self.supervised_directions():
            out.extend(self.pairs(split, src, tgt))
        return out


def _pair_stem(a: str, b: str, centric: str) -> str:
    if a == centric:
        return f"{a}-{b}"
    if b == centric:
        return f"{b}-{a}"
    return "-".join(sorted((a, b)))


def _write_lines(path: Path, sentences: Iterable[Sequence[str]]) -> None:
    path.write_text("".join(" ".join(s) + "\n" for s in sentences), encoding="utf-8")


def _read_lines(path: Path) -> list[list[str]]:
    try:
        return [ln.split() for ln in path.read_text(encoding="utf-8").splitlines()]
    except OSError as exc:
        raise DataError(f"cannot read corpus file {path}: {exc}") from exc


def build_corpus(config: CorpusConfig, out_dir) -> Corpus:
    """Generate all splits and write them, the vocabulary and the config to ``out_dir``.

    Each derived language gets its own disjoint block of centric sentences for
    train/valid/test; the zero-shot test block is disjoint from all of them.
    """
    config.grammar.validate()
    if len(config.languages) < 3:
        raise DataError("need at least three non-centric languages for zero-shot pairs")
    names = [s.language for s in config.languages]
    if config.centric in names or len(set(names)) != len(names):
        raise DataError("language names must be unique and differ from the centric language")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inventory = config.grammar.inventory()
    rewriters = {s.language: LanguageRewriter(s, inventory) for s in config.languages}

    per_lang = config.train_per_language + config.valid_per_language + config.test_per_language
    needed = per_lang * len(config.languages) + config.zero_shot_test
    rng = np.random.default_rng(config.seed)
    pool: list[tuple[str, ...]] = []
    seen: set[tuple[str, ...]] = set()
    attempts, limit = 0, 20 * needed + 1000
    while len(pool) < needed:
        attempts += 1
        if attempts > limit:
            raise DataError(f"grammar produced only {len(pool)} distinct sentences; "
                            f"{needed} requested for overlap-free splits")
        s = tuple(generate_centric_sentence(config.grammar, rng))
        if s not in seen:
            seen.add(s)
            pool.append(s)

    c = config.centric
    cursor = 0
    for spec in config.languages:
        lang = spec.language
        rw = rewriters[lang]
        for split, n in (("train", config.train_per_language), ("valid", config.valid_per_language),
                         ("test", config.test_per_language)):
            block = pool[cursor:cursor + n]
            cursor += n
            stem = _pair_stem(c, lang, c)
            _write_lines(out / f"{split}.{stem}.{c}", block)
            _write_lines(out / f"{split}.{stem}.{lang}", [derive_language(s, rw) for s in block])
    zero = pool[cursor:cursor + config.zero_shot_test]
    for a, b in ((x, y) for i, x in enumerate(names) for y in names[i + 1:]):
        stem = _pair_stem(a, b, c)
        for lang in (a, b):
            _write_lines(out / f"test.{stem}.{lang}", [derive_language(s, rewriters[lang]) for s in zero])
        _write_lines(out / f"test.{stem}.{c}", zero)

    surface = list(inventory)
    for rw in rewriters.values():
        surface += rw.surface_tokens()
    vocab = Vocab.build(config.all_languages, surface)
    vocab.save(out / "vocab.txt")
    (out / "corpus.json").write_text(json.dumps(config.to_dict(), indent=2))
    log.info("wrote corpus with %d centric sentences to %s", len(pool), out)
    return Corpus(out, config, vocab)


def load_corpus(root) -> Corpus:
    root = Path(root)
    if not (root / "vocab.txt").exists():
        raise DataError(f"{root} is not a corpus directory (vocab.txt missing)")
    return Corpus(root, CorpusConfig.load(root / "corpus.json"), Vocab.load(root / "vocab.txt"))


def read_pairs(root: Path, split: str, src: str, tgt: str, vocab: Vocab,
               centric: str) -> list[SentencePair]:
    stem = _pair_stem(src, tgt, centric)
    srcs = _read_lines(Path(root) / f"{split}.{stem}.{src}")
    tgts = _read_lines(Path(root) / f"{split}.{stem}.{tgt}")
    if src == centric or tgt == centric:
        cents = srcs if src == centric else tgts
    else:
        cents = _read_lines(Path(root) / f"{split}.{stem}.{centric}")
    if not (len(srcs) == len(tgts) == len(cents)):
        raise DataError(f"{split}.{stem}: side files have different line counts")
    return [SentencePair(vocab.encode(s), vocab.encode(t), src, tgt, len(cs))
            for s, t, cs in zip(srcs, tgts, cents)]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded tensors for pairs sharing one interlingua length.

    ``src_ids`` rows are ``[<src tag>, x...]``; ``tgt_in`` rows ``[<tgt tag>, y...]``;
    ``tgt_out`` rows ``[y..., </s>]``. All masks mark real positions.
    """

    src_ids: np.ndarray
    src_valid: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_valid: np.ndarray
    len_i: int
    src_langs: list[str]
    tgt_langs: list[str]
    pairs: list[SentencePair]

    def __len__(self) -> int:
        return len(self.pairs)


def _pad(rows: list[list[int]], pad: int) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad, dtype=np.int64)
    valid = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        valid[i, :len(r)] = True
    return out, valid


def make_batch(pairs: Sequence[SentencePair], vocab: Vocab, max_len: int) -> Batch:
    """Pad one group of pairs; all must share the same centric-side length."""
    if not pairs:
        raise DataError("cannot batch zero pairs")
    lens = {p.centric_len for p in pairs}
    if len(lens) != 1:
        raise DataError(f"pairs in one batch must share len_I, got {sorted(lens)}")
    for i, p in enumerate(pairs):
        if len(p.src) + 1 > max_len or len(p.tgt) + 1 > max_len:
            raise DataError(f"pair {i} ({p.src_lang}->{p.tgt_lang}) exceeds K={max_len} "
                            f"after tag prepension")
    src, src_valid = _pad([[vocab.tag_id(p.src_lang), *p.src] for p in pairs], vocab.pad_id)
    tin, tgt_valid = _pad([[vocab.tag_id(p.tgt_lang), *p.tgt] for p in pairs], vocab.pad_id)
    tout, _ = _pad([[*p.tgt, vocab.eos_id] for p in pairs], vocab.pad_id)
    return Batch(src, src_valid, tin, tout, tgt_valid, min(lens.pop(), max_len),
                 [p.src_lang for p in pairs], [p.tgt_lang for p in pairs], list(pairs))


def make_batches(pairs: Sequence[SentencePair], vocab: Vocab, max_len: int,
                 max_sentences: int | None = None) -> list[Batch]:
    """Group pairs by centric-side length (ascending), chunking each group."""
    groups: dict[int, list[SentencePair]] = {}
    for p in pairs:
        groups.setdefault(min(p.centric_len, max_len), []).append(p)
    batches = []
    for length in sorted(groups):
        group = groups[length]
        step = max_sentences or len(group)
        for i in range(0, len(group), step):
            batches.append(make_batch(group[i:i + step], vocab, max_len))
    return batches
