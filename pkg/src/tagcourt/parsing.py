"""Extraction of single-word verdicts from free-form LLM output.

Lines are scanned from the end; the first line whose alphabetic content
(lowercased, punctuation and format labels stripped) equals a vocabulary
word is the verdict line, and everything before it is evidence text.
"""

import re
from typing import Sequence, Tuple

CONTEXTUAL_VOCAB = ("normal", "abnormal")
STRUCTURAL_VOCAB = ("related", "unrelated")

# Output-format labels such as "(Prediction)" or "Judgment:" are markup,
# not content, and never count against the single-word requirement.
_MARKUP_WORDS = frozenset({"prediction", "judgment", "answer"})
_WORD_RE = re.compile(r"[a-z]+")


class NoVerdictFound(ValueError):
    """No line of the output reduces to a vocabulary word."""


def _line_word(line: str, vocabulary: Sequence[str]):
    words = [w for w in _WORD_RE.findall(line.lower()) if w not in _MARKUP_WORDS]
    if len(words) == 1 and words[0] in vocabulary:
        return words[0]
    return None


def parse_single_word_output(text: str, vocabulary: Sequence[str]) -> Tuple[str, str]:
    """(evidence_text, word) for the last line matching the vocabulary."""
    lines = text.splitlines()
    for i in range(len(lines) - 1, -1, -1):
        word = _line_word(lines[i], vocabulary)
        if word is not None:
            return "\n".join(lines[:i]).rstrip(), word
    raise NoVerdictFound(
        f"no line reduces to one of {tuple(vocabulary)} in output {text[:80]!r}"
    )


def parse_prosecutor_output(text: str, vocabulary: Sequence[str]) -> Tuple[str, str]:
    return parse_single_word_output(text, vocabulary)


def parse_judge_output(text: str) -> Tuple[str, str]:
    return parse_single_word_output(text, CONTEXTUAL_VOCAB)
