"""Corpus ingestion, word/subword vocabularies, and BPTT batch streaming.

Corpora are plain UTF-8 text, whitespace tokenized, one sentence per line;
the loader appends ``<eos>`` to every line.  Word ids are dense and ordered
by descending training frequency (ties broken lexicographically), so id
order doubles as the frequency ranking used by the sampled-softmax proposal.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .syllabify import Segmenter, is_pseudo_token

log = logging.getLogger("sublm")

UNK = "<unk>"
EOS = "<eos>"
UNK_SUB = "<unk_sub>"
PAD = "<pad>"


@dataclass
class Vocabularies:
    """Word and subword vocabularies plus training-frequency bookkeeping.

    ``n`` is the maximum number of subwords any training word maps to;
    ``word_freq`` sums to the training token count.  Immutable by
    convention after construction.
    """

    word_to_id: dict[str, int]
    id_to_word: list[str]
    word_freq: np.ndarray
    sub_to_id: dict[str, int]
    id_to_sub: list[str]
    n: int

    @property
    def word_count(self) -> int:
        return len(self.id_to_word)

    @property
    def subword_count(self) -> int:
        return len(self.id_to_sub)

    @property
    def unk_id(self) -> int:
        return self.word_to_id[UNK]

    @property
    def eos_id(self) -> int:
        return self.word_to_id[EOS]

    @property
    def pad_sub_id(self) -> int:
        return self.sub_to_id[PAD]

    @property
    def unk_sub_id(self) -> int:
        return self.sub_to_id[UNK_SUB]

    def word_dump(self) -> str:
        lines = [f"{i}\t{w}\t{int(self.word_freq[i])}"
                 for i, w in enumerate(self.id_to_word)]
        return "\n".join(lines) + "\n"

    def subword_dump(self) -> str:
        lines = [f"{i}\t{s}\t0" for i, s in enumerate(self.id_to_sub)]
        return "\n".join(lines) + "\n"

    def hashes(self) -> dict[str, str]:
        return {
            "words": hashlib.sha256(self.word_dump().encode()).hexdigest(),
            "subwords": hashlib.sha256(self.subword_dump().encode()).hexdigest(),
        }


@dataclass
class EncodedCorpus:
    """Token id streams per split plus the per-word subword table.

    ``subword_rows`` is |W| x n, left-aligned and pad-filled; row w holds the
    subword ids of word w, ``row_lengths[w]`` of them real.
    """

    streams: dict[str, np.ndarray]
    subword_rows: np.ndarray
    row_lengths: np.ndarray
    truncated_words: int = 0


def tokenize(text: str) -> list[str]:
    """Whitespace tokens with <eos> appended per non-blank line."""
    tokens: list[str] = []
    for line in text.splitlines():
        words = line.split()
        if not words:
            continue
        tokens.extend(words)
        tokens.append(EOS)
    return tokens


def segment_vocab_word(word: str, segmenter: Segmenter) -> list[str]:
    if is_pseudo_token(word):
        return [word]
    return segmenter.segment(word)


def build_vocabs(train_text: str, segmenter: Segmenter,
                 word_cap: int | None = None) -> Vocabularies:
    """Word vocabulary from the training split, subwords from segmenting it.

    ``word_cap`` keeps only the most frequent words (the pseudo-tokens are
    always retained); dropped words count toward ``<unk>`` so frequencies
    still sum to the token count.
    """
    tokens = tokenize(train_text)
    if not tokens:
        raise ConfigError("empty training corpus")
    counts: dict[str, int] = {}
    for tok in tokens:
        counts[tok] = counts.get(tok, 0) + 1
    counts.setdefault(UNK, 0)
    counts.setdefault(EOS, 0)

    if word_cap is not None and len(counts) > word_cap:
        if word_cap < 2:
            raise ConfigError("word_cap must keep at least <unk> and <eos>")
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        keep = [UNK, EOS]
        for w in ranked:
            if len(keep) >= word_cap:
                break
            if w not in (UNK, EOS):
                keep.append(w)
        dropped = set(counts) - set(keep)
        counts[UNK] += sum(counts[w] for w in dropped)
        counts = {w: counts[w] for w in keep}

    id_to_word = sorted(counts, key=lambda w: (-counts[w], w))
    word_to_id = {w: i for i, w in enumerate(id_to_word)}
    word_freq = np.array([counts[w] for w in id_to_word], dtype=np.int64)

    sub_counts: dict[str, int] = {}
    n = 1
    for w in id_to_word:
        parts = segment_vocab_word(w, segmenter)
        n = max(n, len(parts))
        for p in parts:
            sub_counts[p] = sub_counts.get(p, 0) + counts[w]
    sub_counts.setdefault(UNK_SUB, 0)
    sub_counts.setdefault(PAD, 0)
    id_to_sub = sorted(sub_counts, key=lambda s: (-sub_counts[s], s))
    sub_to_id = {s: i for i, s in enumerate(id_to_sub)}

    return Vocabularies(word_to_id=word_to_id, id_to_word=id_to_word,
                        word_freq=word_freq, sub_to_id=sub_to_id,
                        id_to_sub=id_to_sub, n=n)


def encode_corpus(texts: dict[str, str], vocabs: Vocabularies,
                  segmenter: Segmenter) -> EncodedCorpus:
    """Encode split texts to id streams and build the subword table.

    Out-of-vocabulary words map to <unk>, unknown subwords to <unk_sub>;
    segmentations longer than ``vocabs.n`` keep their first n subwords (the
    count of affected words is logged and recorded).
    """
    unk = vocabs.unk_id
    streams = {}
    for split, text in texts.items():
        ids = [vocabs.word_to_id.get(tok, unk) for tok in tokenize(text)]
        streams[split] = np.array(ids, dtype=np.int64)

    n = vocabs.n
    rows = np.full((vocabs.word_count, n), vocabs.pad_sub_id, dtype=np.int64)
    lengths = np.zeros(vocabs.word_count, dtype=np.int64)
    truncated = 0
    for wid, word in enumerate(vocabs.id_to_word):
        parts = segment_vocab_word(word, segmenter)
        if len(parts) > n:
            truncated += 1
            parts = parts[:n]
        lengths[wid] = len(parts)
        for j, p in enumerate(parts):
            rows[wid, j] = vocabs.sub_to_id.get(p, vocabs.unk_sub_id)
    if truncated:
        log.warning("%d words had more than %d subwords and were truncated",
                    truncated, n)
    return EncodedCorpus(streams=streams, subword_rows=rows,
                         row_lengths=lengths, truncated_words=truncated)


def decode(stream: np.ndarray, vocabs: Vocabularies) -> list[str]:
    return [vocabs.id_to_word[i] for i in stream]


def batch_stream(stream: np.ndarray, batch_size: int, steps: int):
    """Contiguous-lane batches for truncated BPTT.

    The stream is cut into ``batch_size`` contiguous lanes; each batch
    advances every lane by ``steps`` tokens, with targets one step ahead.
    Yields ``(inputs, targets, carry_state)``; the remainder that does not
    fill a full grid is dropped.
    """
    needed = batch_size * (steps + 1)
    if len(stream) < needed:
        raise ValueError(
            f"stream of {len(stream)} tokens is too short for "
            f"batch_size={batch_size}, steps={steps}: need at least {needed}")
    lane_len = len(stream) // batch_size
    lanes = stream[:lane_len * batch_size].reshape(batch_size, lane_len)
    for j in range((lane_len - 1) // steps):
        lo = j * steps
        yield lanes[:, lo:lo + steps], lanes[:, lo + 1:lo + steps + 1], j > 0


def batch_count(stream_len: int, batch_size: int, steps: int) -> int:
    return (stream_len // batch_size - 1) // steps


def eval_windows(stream: np.ndarray, steps: int):
    """Batch-1 windows covering every target token exactly once.

    The final window may be shorter than ``steps`` so that no token is
    skipped; the target count over all windows is ``len(stream) - 1``.
    """
    if len(stream) < 2:
        raise ValueError("evaluation stream needs at least two tokens")
    for lo in range(0, len(stream) - 1, steps):
        hi = min(lo + steps, len(stream) - 1)
        yield stream[lo:hi][None, :], stream[lo + 1:hi + 1][None, :], lo > 0


# ---------------------------------------------------------------------------
# vocabulary files: `id<TAB>token<TAB>freq`


def save_vocabs(vocabs: Vocabularies, words_path, subwords_path) -> None:
    with open(words_path, "w", encoding="utf-8") as f:
        f.write(vocabs.word_dump())
    with open(subwords_path, "w", encoding="utf-8") as f:
        f.write(vocabs.subword_dump())


def _parse_vocab_file(text: str, what: str) -> tuple[list[str], np.ndarray]:
    tokens: list[str] = []
    freqs: list[int] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ConfigError(f"{what} vocab line {lineno}: expected id<TAB>token<TAB>freq")
        idx, token, freq = fields
        if int(idx) != len(tokens):
            raise ConfigError(f"{what} vocab line {lineno}: ids must be dense and ordered")
        tokens.append(token)
        freqs.append(int(freq))
    return tokens, np.array(freqs, dtype=np.int64)


def load_vocabs(words_path, subwords_path, segmenter: Segmenter) -> Vocabularies:
    """Rebuild Vocabularies from dump files; ``n`` is recomputed by segmenting."""
    with open(words_path, encoding="utf-8") as f:
        id_to_word, word_freq = _parse_vocab_file(f.read(), "word")
    with open(subwords_path, encoding="utf-8") as f:
        id_to_sub, _ = _parse_vocab_file(f.read(), "subword")
    for special, name in ((UNK, "word"), (EOS, "word")):
        if special not in id_to_word:
            raise ConfigError(f"{name} vocab is missing {special}")
    for special in (UNK_SUB, PAD):
        if special not in id_to_sub:
            raise ConfigError(f"subword vocab is missing {special}")
    n = 1
    for w in id_to_word:
        n = max(n, len(segment_vocab_word(w, segmenter)))
    return Vocabularies(
        word_to_id={w: i for i, w in enumerate(id_to_word)},
        id_to_word=id_to_word, word_freq=word_freq,
        sub_to_id={s: i for i, s in enumerate(id_to_sub)},
        id_to_sub=id_to_sub, n=n)
