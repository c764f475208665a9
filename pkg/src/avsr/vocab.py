"""Character vocabulary: the 40-symbol output alphabet plus mode extras.

The base alphabet covers lowercase letters, digits, space, apostrophe, an
end-of-sequence marker and a padding marker: exactly 40 output slots. A
sequence decoder additionally embeds a start token; a frame classifier
additionally emits a blank. The two extras never share an output layer.
"""

from __future__ import annotations

from .errors import VocabularyError

LETTERS = "abcdefghijklmnopqrstuvwxyz"
DIGITS = "0123456789"
SPACE = " "
APOSTROPHE = "'"
EOS = "<eos>"
PAD = "<pad>"
SOS = "<sos>"
BLANK = "<blank>"

BASE_SYMBOLS: tuple[str, ...] = tuple(LETTERS) + tuple(DIGITS) + (SPACE, APOSTROPHE, EOS, PAD)
assert len(BASE_SYMBOLS) == 40


class CharVocab:
    """Symbol/index mapping for one model mode ("seq2seq" or "ctc")."""

    def __init__(self, mode: str = "seq2seq"):
        if mode not in ("seq2seq", "ctc"):
            raise VocabularyError(f"unknown vocab mode {mode!r}")
        self.mode = mode
        self.symbols = list(BASE_SYMBOLS)
        self.index = {s: i for i, s in enumerate(self.symbols)}
        self.eos_id = self.index[EOS]
        self.pad_id = self.index[PAD]
        self.space_id = self.index[SPACE]
        if mode == "seq2seq":
            self.sos_id = len(self.symbols)  # embedding-only, never an output
            self.blank_id = None
        else:
            self.blank_id = len(self.symbols)  # extra output slot
            self.sos_id = None

    @property
    def size(self) -> int:
        """Base output alphabet size (40)."""
        return len(self.symbols)

    @property
    def output_size(self) -> int:
        """Width of the model's output layer (40, +1 blank for ctc)."""
        return self.size + (1 if self.mode == "ctc" else 0)

    @property
    def embed_size(self) -> int:
        """Rows of a decoder embedding table (40, +1 sos for seq2seq)."""
        return self.size + (1 if self.mode == "seq2seq" else 0)

    def encode(self, text: str) -> list[int]:
        ids = []
        for ch in text:
            if ch not in self.index:
                raise VocabularyError(f"symbol {ch!r} not in vocabulary")
            if ch in (EOS, PAD):
                raise VocabularyError(f"reserved symbol {ch!r} cannot appear in text")
            ids.append(self.index[ch])
        return ids

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == self.pad_id or i == self.eos_id:
                continue
            if self.blank_id is not None and i == self.blank_id:
                continue
            if self.sos_id is not None and i == self.sos_id:
                continue
            out.append(self.symbols[i])
        return "".join(out)
