"""Back-off n-gram language model read from ARPA text files.

Scores are log10, as stored in the file.  A state is a tuple of word ids
(most recent last) holding at most ``order - 1`` words; it is truncated to the
longest suffix that can still matter: one that prefixes a longer n-gram or
carries a non-zero backoff.  Equal tuples therefore score the future
identically.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2

# KenLM's convention for a missing <unk>
DEFAULT_UNK_LOGPROB = -100.0

LMState = tuple  # tuple[int, ...]


class ARPAError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class QueryStats:
    queries: int = 0
    oov: int = 0


@dataclass
class NGramModel:
    order: int
    vocab: dict[str, int]
    # n-gram -> (log10 prob or None for implicit context-only entries, log10 backoff)
    entries: dict[tuple[int, ...], tuple[float | None, float]]
    words: list[str] = field(default_factory=list)
    # n-grams that can influence a later query (see module docstring)
    contexts: frozenset = frozenset()

    def index(self, token: str) -> int:
        return self.vocab.get(token, UNK_ID)

    def indices(self, tokens) -> tuple[int, ...]:
        get = self.vocab.get
        return tuple(get(t, UNK_ID) for t in tokens)

    def prob(self, ngram: tuple[int, ...]) -> float | None:
        e = self.entries.get(ngram)
        return None if e is None else e[0]

    def backoff(self, context: tuple[int, ...]) -> float:
        e = self.entries.get(context)
        return 0.0 if e is None else e[1]

    def begin_state(self) -> LMState:
        return (BOS_ID,)

    def null_state(self) -> LMState:
        return ()

    def score_word(self, state: LMState, word: int, stats: QueryStats | None = None):
        """Return ``(log10 p(word | state), next_state)``.

        The back-off sum is accumulated as ``bo(c) + (bo(c[1:]) + (... + p))``,
        the same association as the recursive definition.
        """
        entries = self.entries
        if stats is not None:
            stats.queries += 1
            if word == UNK_ID:
                stats.oov += 1
        skipped = []
        n = len(state)
        for k in range(n, -1, -1):
            ctx = state[n - k:]
            e = entries.get(ctx + (word,))
            if e is not None and e[0] is not None:
                score = e[0]
                break
            if k:
                c = entries.get(ctx)
                if c is not None:
                    skipped.append(c[1])
        else:  # word has no unigram of its own (e.g. </s> absent from the file)
            score = entries[(UNK_ID,)][0]
        for b in reversed(skipped):
            score = b + score
        if self.order == 1:
            return score, ()
        nxt = (state + (word,))[-(self.order - 1):]
        contexts = self.contexts
        while nxt and nxt not in contexts:
            nxt = nxt[1:]
        return score, nxt

    def score_phrase(self, state: LMState, words, stats: QueryStats | None = None):
        total = 0.0
        for w in words:
            s, state = self.score_word(state, w, stats)
            total += s
        return total, state

    def score_sentence(self, tokens) -> float:
        """log10 of ``<s> tokens </s>``."""
        total, state = self.score_phrase(self.begin_state(), self.indices(tokens))
        s, _ = self.score_word(state, EOS_ID)
        return total + s


def begin_state(model: NGramModel) -> LMState:
    return model.begin_state()


def score_word(model: NGramModel, state: LMState, word: int):
    return model.score_word(state, word)


def score_phrase(model: NGramModel, state: LMState, words):
    return model.score_phrase(state, words)


_COUNT_RE = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")
_SECTION_RE = re.compile(r"^\\(\d+)-grams:$")


def _float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ARPAError(lineno, f"non-numeric value {tok!r}") from None


def load_arpa(path) -> NGramModel:
    with open(path, encoding="utf-8") as f:
        return parse_arpa(f)


def parse_arpa(lines) -> NGramModel:
    vocab = {UNK: UNK_ID, BOS: BOS_ID, EOS: EOS_ID}
    words = [UNK, BOS, EOS]
    entries: dict[tuple[int, ...], tuple[float | None, float]] = {}
    counts: dict[int, int] = {}
    state = "start"
    section = 0
    seen = 0
    lineno = 0
    sections: set[int] = set()

    def close_section(at: int):
        if section and seen != counts.get(section, -1):
            raise ARPAError(at, f"{section}-grams: header says {counts.get(section)}, found {seen}")

    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if state == "start":
            if not line:
                continue
            if line != "\\data\\":
                raise ARPAError(lineno, "expected \\data\\ header")
            state = "counts"
            continue
        if state == "counts":
            if not line:
                continue
            m = _COUNT_RE.match(line)
            if m:
                n, c = int(m.group(1)), int(m.group(2))
                if n != len(counts) + 1:
                    raise ARPAError(lineno, f"unexpected ngram order {n} in header")
                counts[n] = c
                continue
            state = "body"
            if not counts:
                raise ARPAError(lineno, "header lists no ngram counts")
        # body
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m or line == "\\end\\":
            close_section(lineno)
            if line == "\\end\\":
                state = "end"
                break
            section = int(m.group(1))
            sections.add(section)
            if section not in counts:
                raise ARPAError(lineno, f"section {section}-grams not declared in header")
            seen = 0
            continue
        if not section:
            raise ARPAError(lineno, "n-gram line outside a section")
        parts = line.split()
        if len(parts) == section + 1:
            bo = 0.0
        elif len(parts) == section + 2:
            bo = _float(parts[-1], lineno)
        else:
            raise ARPAError(lineno, f"expected {section} words in {section}-gram line")
        prob = _float(parts[0], lineno)
        toks = parts[1:section + 1]
        if section == 1:
            wid = vocab.get(toks[0])
            if wid is None:
                wid = len(words)
                vocab[toks[0]] = wid
                words.append(toks[0])
            key = (wid,)
        else:
            try:
                key = tuple(vocab[t] for t in toks)
            except KeyError as e:
                raise ARPAError(lineno, f"word {e.args[0]!r} missing from unigrams") from None
        entries[key] = (prob, bo)
        seen += 1
    if state != "end":
        raise ARPAError(lineno, "missing \\end\\ marker")

    for n, c in counts.items():
        if c and n not in sections:
            raise ARPAError(lineno, f"{n}-grams section missing")
    order = max(counts)
    # contexts missing from the file exist implicitly with zero backoff
    contexts = set()
    for key, (_, bo) in list(entries.items()):
        if bo != 0.0 and len(key) < order:
            contexts.add(key)
        for k in range(1, len(key)):
            pre = key[:k]
            contexts.add(pre)
            if pre not in entries:
                entries[pre] = (None, 0.0)
    if (UNK_ID,) not in entries:
        entries[(UNK_ID,)] = (DEFAULT_UNK_LOGPROB, 0.0)
    return NGramModel(order=order, vocab=vocab, entries=entries, words=words, contexts=frozenset(contexts))
