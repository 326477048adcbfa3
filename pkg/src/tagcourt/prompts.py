"""Prompt construction for the two prosecutor roles and the judge.

Templates are plain text files with <SYS>/<USER> section markers and the
placeholders <text attribute>, <neighbor text>, <corresponding text>, and
<prosecutor opinion>. A prompt is an ordered list of (role, content) pairs
whose first message is always a system message.
"""

from __future__ import annotations

import re
from importlib import resources
from typing import Dict, List, Sequence, Tuple

PromptMessages = List[Tuple[str, str]]

PROFILES = ("arxiv", "history", "cora", "pubmed", "synthetic")
ROLES = ("contextual", "structural", "judge")

PLACEHOLDERS = ("<text attribute>", "<neighbor text>", "<corresponding text>", "<prosecutor opinion>")

# Appended to judge prompts whose template text lacks an isolated-node rule.
NO_NEIGHBOR_RULE = "If the central paper has no neighbors, conclude that there is no structural anomaly."

_OPINION_BLOCK_RE = re.compile(
    r"for <corresponding text> prosecutor: <prosecutor opinion>\.?"
)
_SECTION_RE = re.compile(r"^<(SYS|USER)>\s?", re.MULTILINE)

_template_cache: Dict[Tuple[str, str], PromptMessages] = {}


class PromptError(ValueError):
    pass


def _parse_template(text: str) -> PromptMessages:
    messages: PromptMessages = []
    pos = 0
    current_role = None
    for match in _SECTION_RE.finditer(text):
        if current_role is not None:
            messages.append((current_role, text[pos : match.start()].strip()))
        current_role = "system" if match.group(1) == "SYS" else "user"
        pos = match.end()
    if current_role is not None:
        messages.append((current_role, text[pos:].strip()))
    if not messages or messages[0][0] != "system":
        raise PromptError("template must start with a <SYS> section")
    return messages


def load_template(profile: str, role: str) -> PromptMessages:
    """Parsed template for (profile, role); cached after first read."""
    if profile not in PROFILES:
        raise PromptError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    if role not in ROLES:
        raise PromptError(f"unknown template role {role!r}")
    key = (profile, role)
    if key not in _template_cache:
        ref = resources.files("tagcourt.data.prompts") / f"{profile}_{role}.txt"
        _template_cache[key] = _parse_template(ref.read_text(encoding="utf-8"))
    return [(r, c) for r, c in _template_cache[key]]


def render_node_text(text: str, title=None) -> str:
    """The value substituted for <text attribute>: title-prefixed when present."""
    if title:
        return f"{title}. {text}"
    return text


def _substitute(messages: PromptMessages, mapping: Dict[str, str]) -> PromptMessages:
    out = []
    for role, content in messages:
        for placeholder, value in mapping.items():
            content = content.replace(placeholder, value)
        out.append((role, content))
    return out


def _check_filled(messages: PromptMessages) -> PromptMessages:
    for _, content in messages:
        for placeholder in PLACEHOLDERS:
            if placeholder in content:
                raise PromptError(f"unfilled placeholder {placeholder!r} in rendered prompt")
    return messages


def build_contextual_prompt(profile: str, node) -> PromptMessages:
    """Prompt asking whether a node's text contains content anomalies."""
    template = load_template(profile, "contextual")
    text = render_node_text(node.text, node.title)
    if not text:
        raise PromptError(f"node {node.id} has empty text")
    return _check_filled(_substitute(template, {"<text attribute>": text}))


def build_structural_prompt(profile: str, center, neighbor) -> PromptMessages:
    """Prompt asking whether a center/neighbor pair is plausibly related."""
    template = load_template(profile, "structural")
    center_text = render_node_text(center.text, center.title)
    neighbor_text = render_node_text(neighbor.text, neighbor.title)
    if not center_text or not neighbor_text:
        raise PromptError("structural prompt requires non-empty texts for both nodes")
    return _check_filled(
        _substitute(
            template,
            {"<text attribute>": center_text, "<neighbor text>": neighbor_text},
        )
    )


def build_judge_prompt(
    profile: str,
    node,
    contextual_opinions: Sequence[Tuple[str, str]],
    structural_opinions: Sequence[Tuple[str, str]],
    n_contextual: int = 5,
    n_structural: int = 5,
) -> PromptMessages:
    """Prompt presenting all prosecutor opinions for a final verdict.

    Opinions are (corresponding text, opinion) pairs, contextual first. The
    isolated-node rule is appended when there are no structural opinions and
    the template itself does not state it.
    """
    if len(contextual_opinions) != n_contextual:
        raise PromptError(
            f"expected {n_contextual} contextual opinions, got {len(contextual_opinions)}"
        )
    if len(structural_opinions) > n_structural:
        raise PromptError(
            f"expected at most {n_structural} structural opinions, got {len(structural_opinions)}"
        )
    template = load_template(profile, "judge")
    blocks = [
        f"for {text} prosecutor: {opinion}."
        for text, opinion in list(contextual_opinions) + list(structural_opinions)
    ]
    rendered: PromptMessages = []
    for role, content in template:
        if _OPINION_BLOCK_RE.search(content):
            content = _OPINION_BLOCK_RE.sub(lambda _: " ".join(blocks), content, count=1)
        rendered.append((role, content))
    rendered = _substitute(
        rendered, {"<text attribute>": render_node_text(node.text, node.title)}
    )
    if not structural_opinions:
        sys_text = " ".join(c for r, c in rendered if r == "system")
        if "no neighbors" not in sys_text:
            role, content = rendered[0]
            rendered[0] = (role, content + " " + NO_NEIGHBOR_RULE)
    return _check_filled(rendered)


def build_combined_prompt(
    profile: str, node, neighbor_texts: Sequence[str]
) -> PromptMessages:
    """Single prompt covering both perspectives (used by the one-prosecutor
    court mode): contextual and structural instructions concatenated, with a
    normal/abnormal output grammar."""
    ctx = load_template(profile, "contextual")
    struct = load_template(profile, "structural")
    text = render_node_text(node.text, node.title)
    if not text:
        raise PromptError(f"node {node.id} has empty text")
    neighbors_block = (
        "; ".join(neighbor_texts) if neighbor_texts else "(this node has no neighbors)"
    )
    system = (
        ctx[0][1]
        + " In addition: "
        + struct[0][1]
        + " Judge both aspects at once: the node is anomalous if its text is"
        " anomalous or if it has an implausible neighbor."
    )
    user = (
        f"Is there anything unusual about the following node? Here is the text: {text}"
        f" And here are the texts of its sampled neighbors: {neighbors_block}"
    )
    grammar = (
        'Provide a concise explanation. Then, on a new line, you must conclude'
        ' with only one word: "normal" or "abnormal".'
    )
    return [("system", system), ("user", user), ("system", grammar)]
