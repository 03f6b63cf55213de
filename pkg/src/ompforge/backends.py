"""Completion backends behind one request/result contract.

Three implementations: a trainable n-gram language model (deterministic,
trains in seconds, supplies token log-probabilities), a remote client for
the common ``/v1/completions`` HTTP protocol, and a scripted backend that
replays canned outputs for tests.
"""

from __future__ import annotations

import logging
import math
import os
import random
import struct
import threading
from collections import deque
from dataclasses import dataclass, field

import requests

from . import clex
from .errors import (BackendUnavailable, BadMagic, CorruptPayload,
                     EmptyCorpus, NotTrained, ScriptedExhausted,
                     VersionMismatch)

log = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"


@dataclass(frozen=True)
class CompletionRequest:
    """Backend-neutral generation request."""

    prompt: str
    max_tokens: int = 256
    stop_sequences: tuple[str, ...] = ()
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class CompletionResult:
    """Generated continuation; the stop sequence itself is excluded.

    When ``token_logprobs`` is present, concatenating its token strings
    reproduces ``text`` exactly.
    """

    text: str
    finish_reason: str  # "stop" | "length" | "end-of-model"
    token_logprobs: tuple[tuple[str, float], ...] | None = None


def _find_stop(text: str, stops) -> int | None:
    """Offset of the earliest stop-sequence occurrence, or None."""
    best = None
    for stop in stops:
        if not stop:
            continue
        idx = text.find(stop)
        if idx != -1 and (best is None or idx < best):
            best = idx
    return best


class NGramModel:
    """Count-based language model over lexical code tokens.

    Contexts of every length up to ``order - 1`` are counted, with
    begin/end sentinels around each training text. Scoring uses add-k
    smoothing over the non-sentinel vocabulary when the context has been
    seen, and stupid backoff to shorter contexts (scaled by ``backoff``)
    when it has not. The end sentinel is tracked per context for stopping
    decisions but sits outside the normalized distribution, so for every
    seen context the smoothed probabilities over the vocabulary sum to 1.
    """

    def __init__(self, order: int, k: float = 1.0, backoff: float = 0.4):
        if order < 1:
            raise ValueError("order must be >= 1")
        if k < 0:
            raise ValueError("k must be >= 0")
        self.order = order
        self.k = k
        self.backoff = backoff
        self.vocab: dict[str, int] = {}
        self._counts: dict[tuple[str, ...], dict[str, int]] = {}
        self._real_totals: dict[tuple[str, ...], int] = {}
        self._trained = False

    # -- training ----------------------------------------------------------

    def add_text(self, text: str) -> None:
        tokens = clex.token_values(text)
        seq = [BOS] * (self.order - 1) + tokens + [EOS]
        for tok in seq:
            if tok not in self.vocab:
                self.vocab[tok] = len(self.vocab)
        start = self.order - 1
        for i in range(start, len(seq)):
            target = seq[i]
            for clen in range(self.order):
                ctx = tuple(seq[i - clen:i])
                node = self._counts.get(ctx)
                if node is None:
                    node = {}
                    self._counts[ctx] = node
                    self._real_totals[ctx] = 0
                node[target] = node.get(target, 0) + 1
                if target != EOS:
                    self._real_totals[ctx] += 1
        self._trained = True

    @property
    def vocab_size(self) -> int:
        """Smoothing vocabulary: distinct non-sentinel tokens."""
        return sum(1 for tok in self.vocab if tok not in (BOS, EOS))

    def _check_trained(self):
        if not self._trained:
            raise NotTrained("n-gram model has no counts; train or load first")

    # -- scoring -----------------------------------------------------------

    def _prob(self, token: str, history: list[str]) -> float:
        ctx = tuple(history[-(self.order - 1):]) if self.order > 1 else ()
        vsize = self.vocab_size
        mult = 1.0
        while True:
            node = self._counts.get(ctx)
            if node is not None:
                real_total = self._real_totals[ctx]
                c = node.get(token, 0)
                if token == EOS:
                    c = 0
                if self.k > 0:
                    return mult * (c + self.k) / (real_total + self.k * vsize)
                if c > 0:
                    return mult * c / real_total
            if not ctx:
                return 0.0
            ctx = ctx[1:]
            mult *= self.backoff

    def score(self, tokens, context=None) -> list[float]:
        """Natural-log probability of each token given all before it.

        Conditioning starts from begin sentinels, optionally extended by
        ``context`` tokens, and is truncated to ``order - 1``. With k > 0
        no score is ever -inf.
        """
        self._check_trained()
        history = [BOS] * (self.order - 1)
        if context:
            history.extend(context)
        out = []
        for tok in tokens:
            p = self._prob(tok, history)
            out.append(math.log(p) if p > 0 else -math.inf)
            history.append(tok)
        return out

    # -- generation --------------------------------------------------------

    def next_token(self, history: list[str],
                   temperature: float = 0.0,
                   rng: random.Random | None = None) -> tuple[str, float]:
        """Pick the next token (possibly the end sentinel) and its logprob.

        Greedy decode (temperature 0) takes the highest count at the
        longest seen context, ties broken lexically, so the choice does not
        depend on dict insertion order or smoothing strength.
        """
        self._check_trained()
        ctx = tuple(history[-(self.order - 1):]) if self.order > 1 else ()
        node = None
        while True:
            node = self._counts.get(ctx)
            if node is not None:
                break
            if not ctx:
                break
            ctx = ctx[1:]
        if not node:
            return EOS, 0.0
        if temperature > 0 and rng is not None:
            items = sorted(node.items())
            weights = [count ** (1.0 / temperature) for _, count in items]
            tok = rng.choices([t for t, _ in items], weights=weights)[0]
        else:
            tok = min(node.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if tok == EOS:
            return EOS, 0.0
        p = self._prob(tok, history)
        return tok, (math.log(p) if p > 0 else -math.inf)


def train_ngram(corpus, order: int, k: float = 1.0,
                backoff: float = 0.4) -> NGramModel:
    """Train an n-gram model from training texts (objects with ``.text``
    or plain strings)."""
    model = NGramModel(order=order, k=k, backoff=backoff)
    count = 0
    for item in corpus:
        model.add_text(item.text if hasattr(item, "text") else item)
        count += 1
    if count == 0:
        raise EmptyCorpus("no training texts supplied")
    return model


class NGramBackend:
    """Completion interface over a trained :class:`NGramModel`.

    The model is read-only here, so one backend may serve concurrent
    callers. Generated text re-joins tokens with minimal spacing; each
    ``token_logprobs`` entry carries its joining space so concatenation
    reproduces the text.
    """

    def __init__(self, model: NGramModel, seed: int = 0):
        self.model = model
        self._seed = seed

    def complete(self, request: CompletionRequest) -> CompletionResult:
        model = self.model
        model._check_trained()
        rng = random.Random(self._seed) if request.temperature > 0 else None
        prompt_tokens = clex.token_values(request.prompt)
        history = [BOS] * (model.order - 1) + prompt_tokens
        prev = prompt_tokens[-1] if prompt_tokens else ""
        pieces: list[str] = []
        logprobs: list[tuple[str, float]] = []
        finish = "length"
        for _ in range(request.max_tokens):
            tok, lp = model.next_token(history, request.temperature, rng)
            if tok == EOS:
                finish = "end-of-model"
                break
            piece = clex.joiner(prev, tok) + tok
            pieces.append(piece)
            logprobs.append((piece, lp))
            history.append(tok)
            prev = tok
            cut = _find_stop("".join(pieces), request.stop_sequences)
            if cut is not None:
                pieces, logprobs = _truncate_pieces(pieces, logprobs, cut)
                finish = "stop"
                break
        return CompletionResult(text="".join(pieces), finish_reason=finish,
                                token_logprobs=tuple(logprobs))


def _truncate_pieces(pieces, logprobs, cut):
    out_p, out_l = [], []
    used = 0
    for piece, entry in zip(pieces, logprobs):
        if used + len(piece) <= cut:
            out_p.append(piece)
            out_l.append(entry)
            used += len(piece)
            continue
        keep = cut - used
        if keep > 0:
            out_p.append(piece[:keep])
            out_l.append((piece[:keep], entry[1]))
        break
    return out_p, out_l


class ScriptedBackend:
    """Replays a fixed queue of continuations, one per request.

    Requests are recorded for assertions. Running past the end of the
    queue raises :class:`ScriptedExhausted` so a test can never silently
    under-consume its fixture.
    """

    def __init__(self, replies):
        self._queue = deque(replies)
        self.requests: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> CompletionResult:
        self.requests.append(request)
        if not self._queue:
            raise ScriptedExhausted(
                f"no scripted reply left for prompt {request.prompt[-60:]!r}")
        raw = self._queue.popleft()
        cut = _find_stop(raw, request.stop_sequences)
        if cut is not None:
            return CompletionResult(text=raw[:cut], finish_reason="stop")
        return CompletionResult(text=raw, finish_reason="end-of-model")

    @property
    def pending(self) -> int:
        return len(self._queue)


API_KEY_ENV = "OMP_FORGE_API_KEY"


class RemoteBackend:
    """Client for a ``POST {base_url}/v1/completions`` endpoint.

    The API key is read from ``OMP_FORGE_API_KEY`` at request time and sent
    as a bearer authorization header. Timeouts and transport errors turn
    into :class:`BackendUnavailable`; non-2xx responses surface the body.
    In-flight requests are bounded by ``max_in_flight``.
    """

    def __init__(self, base_url: str, model: str, timeout: float = 60.0,
                 max_in_flight: int = 4, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self._session = session or requests.Session()

    def complete(self, request: CompletionRequest) -> CompletionResult:
        body = {
            "model": self.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "stop": list(request.stop_sequences),
        }
        headers = {}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = self.base_url + "/v1/completions"
        with self._sem:
            try:
                resp = self._session.post(url, json=body, headers=headers,
                                          timeout=self.timeout)
            except requests.RequestException as exc:
                raise BackendUnavailable(f"{url}: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise BackendUnavailable(
                f"{url}: HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            payload = resp.json()
            choice = payload["choices"][0]
            text = choice["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(
                f"{url}: malformed response body: {resp.text[:500]}") from exc
        finish = choice.get("finish_reason")
        if finish not in ("stop", "length", "end-of-model"):
            finish = "stop"
        cut = _find_stop(text, request.stop_sequences)
        if cut is not None:
            text = text[:cut]
            finish = "stop"
        logprobs = _parse_remote_logprobs(choice, text)
        return CompletionResult(text=text, finish_reason=finish,
                                token_logprobs=logprobs)


def _parse_remote_logprobs(choice, text):
    lp = choice.get("logprobs")
    if not isinstance(lp, dict):
        return None
    tokens = lp.get("tokens")
    values = lp.get("token_logprobs")
    if not isinstance(tokens, list) or not isinstance(values, list):
        return None
    pairs = []
    used = 0
    for tok, val in zip(tokens, values):
        if used >= len(text):
            break
        pairs.append((tok, float(val)))
        used += len(tok)
    if "".join(t for t, _ in pairs) != text:
        log.debug("remote logprob tokens do not reconstruct text; dropped")
        return None
    return tuple(pairs)


# -- model serialization ----------------------------------------------------
#
# Layout (little-endian): magic "OMPNGRAM1", u32 version, u32 order,
# f64 k, f64 backoff, u32 vocab size then tokens in id order as u32
# length + UTF-8 bytes, u64 context count then per context: u32 context
# length, that many u32 token ids, u32 target count, and per target a
# u32 token id + u64 count. Contexts are sorted for byte-stable output.

MAGIC = b"OMPNGRAM1"
FORMAT_VERSION = 1


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CorruptPayload(
                f"truncated model file at byte {self.pos} (wanted {size} more)")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]


def save_model(model: NGramModel, path) -> None:
    model._check_trained()
    id_to_tok = sorted(model.vocab, key=model.vocab.get)
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             struct.pack("<I", model.order),
             struct.pack("<d", model.k), struct.pack("<d", model.backoff),
             struct.pack("<I", len(id_to_tok))]
    for tok in id_to_tok:
        raw = tok.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    contexts = sorted(model._counts,
                      key=lambda ctx: (len(ctx), [model.vocab[t] for t in ctx]))
    parts.append(struct.pack("<Q", len(contexts)))
    for ctx in contexts:
        parts.append(struct.pack("<I", len(ctx)))
        for tok in ctx:
            parts.append(struct.pack("<I", model.vocab[tok]))
        node = model._counts[ctx]
        parts.append(struct.pack("<I", len(node)))
        for tok_id, count in sorted((model.vocab[t], c) for t, c in node.items()):
            parts.append(struct.pack("<IQ", tok_id, count))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path) -> NGramModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not a model file")
    rd = _Reader(data)
    rd.pos = len(MAGIC)
    version = rd.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, "
                              f"expected {FORMAT_VERSION}")
    order = rd.u32()
    k = rd.f64()
    backoff = rd.f64()
    if order < 1 or k < 0:
        raise CorruptPayload(f"{path}: invalid header fields")
    model = NGramModel(order=order, k=k, backoff=backoff)
    vocab_size = rd.u32()
    id_to_tok = []
    for _ in range(vocab_size):
        raw = rd.take(rd.u32())
        try:
            tok = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptPayload(f"{path}: bad token bytes") from exc
        id_to_tok.append(tok)
        model.vocab[tok] = len(model.vocab)
    n_contexts = rd.u64()
    for _ in range(n_contexts):
        clen = rd.u32()
        if clen >= order:
            raise CorruptPayload(f"{path}: context longer than order")
        try:
            ctx = tuple(id_to_tok[rd.u32()] for _ in range(clen))
            node = {}
            real_total = 0
            for _ in range(rd.u32()):
                tok_id, count = struct.unpack("<IQ", rd.take(12))
                tok = id_to_tok[tok_id]
                node[tok] = count
                if tok != EOS:
                    real_total += count
        except IndexError as exc:
            raise CorruptPayload(f"{path}: token id out of range") from exc
        model._counts[ctx] = node
        model._real_totals[ctx] = real_total
    if rd.pos != len(data):
        raise CorruptPayload(f"{path}: {len(data) - rd.pos} trailing bytes")
    model._trained = bool(model._counts)
    if not model._trained:
        raise CorruptPayload(f"{path}: model has no counts")
    return model
