"""Pluggable character language model with a count-based n-gram default.

The decoder-facing interface is three methods: initial_state(), knows(symbol)
and score(state, symbol) -> (log-prob, next state). The default implementation
is an order-n character model with additive smoothing over a fixed alphabet
plus an end-of-text event, so every conditional distribution sums to one
exactly and unknown symbols fail loudly instead of absorbing probability mass.
"""

from __future__ import annotations

import json
import math

from .errors import ConfigError, DataError, VocabularyError

BOS_MARK = "\x02"  # context filler before line start
EOS_MARK = "\x03"  # end-of-text event (scoreable, never part of a context)

DEFAULT_ORDER = 5
DEFAULT_DELTA = 1.0


class CharNgramLM:
    """Additively smoothed character n-gram over a fixed alphabet."""

    def __init__(self, order: int = DEFAULT_ORDER, delta: float = DEFAULT_DELTA, alphabet=None):
        if order < 1:
            raise ConfigError(f"n-gram order must be >= 1, got {order}")
        if delta <= 0:
            raise ConfigError(f"additive smoothing constant must be > 0, got {delta}")
        self.order = order
        self.delta = delta
        self.alphabet: list[str] = sorted(set(alphabet)) if alphabet else []
        self._events: list[str] = []
        self.counts: dict[tuple[str, ...], dict[str, int]] = {}
        self.totals: dict[tuple[str, ...], int] = {}
        self._refresh_events()

    def _refresh_events(self) -> None:
        self._events = self.alphabet + [EOS_MARK]
        self._event_index = {s: i for i, s in enumerate(self._events)}

    # -- training -------------------------------------------------------------

    def train(self, lines) -> "CharNgramLM":
        """Accumulate n-gram counts from an iterable of text lines."""
        lines = list(lines)
        if not self.alphabet:
            chars = sorted({ch for line in lines for ch in line})
            if not chars:
                raise DataError("cannot train a language model on empty text")
            self.alphabet = chars
            self._refresh_events()
        for line in lines:
            state = self.initial_state()
            for ch in line:
                if ch not in self._event_index:
                    raise VocabularyError(f"training text contains {ch!r}, not in the fixed alphabet")
                self._bump(state, ch)
                state = self._advance(state, ch)
            self._bump(state, EOS_MARK)
        return self

    def _bump(self, state, sym) -> None:
        ctx = self.counts.setdefault(state, {})
        ctx[sym] = ctx.get(sym, 0) + 1
        self.totals[state] = self.totals.get(state, 0) + 1

    # -- scoring ----------------------------------------------------------------

    def initial_state(self) -> tuple[str, ...]:
        return (BOS_MARK,) * (self.order - 1)

    def _advance(self, state, sym) -> tuple[str, ...]:
        if self.order == 1:
            return ()
        return (state + (sym,))[-(self.order - 1):]

    def knows(self, symbol: str) -> bool:
        return symbol in self._event_index

    def score(self, state, symbol: str) -> tuple[float, tuple[str, ...]]:
        """log p(symbol | state) and the successor state."""
        if symbol not in self._event_index:
            raise VocabularyError(f"symbol {symbol!r} not in the language model alphabet")
        k = len(self._events)
        ctx = self.counts.get(state, {})
        total = self.totals.get(state, 0)
        p = (ctx.get(symbol, 0) + self.delta) / (total + self.delta * k)
        new_state = state if symbol == EOS_MARK else self._advance(state, symbol)
        return math.log(p), new_state

    def log_dist(self, state) -> dict[str, float]:
        """log p(. | state) over the full event alphabet (sums to 1)."""
        k = len(self._events)
        ctx = self.counts.get(state, {})
        total = self.totals.get(state, 0)
        denom = total + self.delta * k
        return {s: math.log((ctx.get(s, 0) + self.delta) / denom) for s in self._events}

    # -- persistence --------------------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "order": self.order,
            "delta": self.delta,
            "alphabet": self.alphabet,
            "counts": [["".join(ctx), dict(sym_counts)] for ctx, sym_counts in sorted(self.counts.items())],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=True, sort_keys=True)

    @staticmethod
    def load(path) -> "CharNgramLM":
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        lm = CharNgramLM(order=payload["order"], delta=payload["delta"], alphabet=payload["alphabet"])
        for ctx_str, sym_counts in payload["counts"]:
            ctx = tuple(ctx_str)
            lm.counts[ctx] = {str(s): int(c) for s, c in sym_counts.items()}
            lm.totals[ctx] = sum(lm.counts[ctx].values())
        return lm


def train_lm_file(text_path, lm_path, order: int = DEFAULT_ORDER, delta: float = DEFAULT_DELTA) -> CharNgramLM:
    """Train from a newline-delimited transcript file and persist."""
    with open(text_path, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    lm = CharNgramLM(order=order, delta=delta).train(lines)
    lm.save(lm_path)
    return lm
