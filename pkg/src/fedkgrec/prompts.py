"""Chat prompt assembly, completion rendering, and response parsing.

The four message templates are byte-pinned (golden-file tested); parsing is
deliberately lenient so that arbitrary model output degrades to an empty
recommendation list instead of an error.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .dataset import parse_iso_date
from .errors import AblationMismatch, TooManyAssets

MAX_RECOMMENDATIONS = 20

SYSTEM_PROMPT = (
    "You are an expert financial analyst AI. Your task is to analyze a user's "
    "transaction history and supplementary market data to provide personalized "
    "asset recommendations. The user will ask for recommendations for the next "
    '180 days from a given "current date".\n'
    "\n"
    "You MUST provide your response in the following format, and only this format:\n"
    "\n"
    "[An introductory sentence]\n"
    "- [ASSET_ISIN_1]\n"
    "- [ASSET_ISIN_2]\n"
    "- [ASSET_ISIN_3]"
)

MKG_TEMPLATE = (
    "Here is the supplementary knowledge graph with asset information and "
    "historical prices in JSON-LD format:\n"
    "\n"
    "```jsonld\n"
    "{MARKET_KNOWLEDGE_GRAPH}\n"
    "```"
)

PKG_TEMPLATE = (
    "Here is the user's transaction history in JSON-LD format:\n"
    "\n"
    "```jsonld\n"
    "{PERSONAL_KNOWLEDGE_GRAPH}\n"
    "```"
)

USER_REQUEST_TEMPLATE = (
    "Considering all the provided data, and assuming the current date is "
    "{RECOMMENDATION_DATE}, please provide a list of asset recommendations "
    "for my portfolio for the next 6 months."
)

DEFAULT_COMPLETION_INTRO = "Based on your history, I recommend:"


class Role(enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class Ablation(enum.Enum):
    COMBINED = "combined"
    PKG_ONLY = "pkg"
    MKG_ONLY = "mkg"
    NOTHING = "nothing"

    @property
    def wants_pkg(self) -> bool:
        return self in (Ablation.COMBINED, Ablation.PKG_ONLY)

    @property
    def wants_mkg(self) -> bool:
        return self in (Ablation.COMBINED, Ablation.MKG_ONLY)


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self):
        if not self.content:
            raise ValueError("empty message content")


@dataclass(frozen=True)
class PromptInstance:
    customer_id: str
    recommendation_date: date
    ablation: Ablation
    messages: tuple[ChatMessage, ...]

    def __post_init__(self):
        if not self.messages or self.messages[0].role is not Role.SYSTEM:
            raise ValueError("prompt messages must start with the system message")

    @property
    def instance_id(self) -> str:
        return f"{self.customer_id}@{self.recommendation_date.isoformat()}"


@dataclass(frozen=True)
class ParsedRecommendation:
    isins: tuple[str, ...]


def build_messages(
    pkg_doc: str | None,
    mkg_doc: str | None,
    recommendation_date: date,
    ablation: Ablation,
) -> tuple[ChatMessage, ...]:
    """System message, optional MKG/PKG blocks, then the user request."""
    if (pkg_doc is not None) != ablation.wants_pkg:
        raise AblationMismatch(f"ablation {ablation.value}: pkg_doc {'missing' if ablation.wants_pkg else 'unexpected'}")
    if (mkg_doc is not None) != ablation.wants_mkg:
        raise AblationMismatch(f"ablation {ablation.value}: mkg_doc {'missing' if ablation.wants_mkg else 'unexpected'}")

    messages = [ChatMessage(Role.SYSTEM, SYSTEM_PROMPT)]
    if mkg_doc is not None:
        content = MKG_TEMPLATE.replace("{MARKET_KNOWLEDGE_GRAPH}", mkg_doc.rstrip("\n"))
        messages.append(ChatMessage(Role.USER, content))
    if pkg_doc is not None:
        content = PKG_TEMPLATE.replace("{PERSONAL_KNOWLEDGE_GRAPH}", pkg_doc.rstrip("\n"))
        messages.append(ChatMessage(Role.USER, content))
    request = USER_REQUEST_TEMPLATE.replace("{RECOMMENDATION_DATE}", recommendation_date.isoformat())
    messages.append(ChatMessage(Role.USER, request))
    return tuple(messages)


def render_completion(isins: list[str] | tuple[str, ...], intro: str = DEFAULT_COMPLETION_INTRO) -> str:
    """Intro line plus one '- <ISIN>' bullet per asset (max 20)."""
    if not isins:
        raise ValueError("completion needs at least one asset")
    if len(isins) > MAX_RECOMMENDATIONS:
        raise TooManyAssets(f"{len(isins)} assets, limit is {MAX_RECOMMENDATIONS}")
    return "\n".join([intro, *(f"- {isin}" for isin in isins)])


def parse_response(text: str) -> ParsedRecommendation:
    """Extract the recommended ISINs from arbitrary model output.

    Any line whose stripped form starts with '- ' contributes its first
    token (markdown emphasis and one bracket pair stripped); duplicates keep
    the first occurrence.  Never raises.
    """
    seen: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped.startswith("- "):
            continue
        token = stripped[2:].strip()
        if token:
            token = token.split()[0]
        token = token.strip("*`_")
        if len(token) >= 2 and token[0] == "[" and token[-1] == "]":
            token = token[1:-1].strip()
        if token and token not in seen:
            seen.append(token)
    return ParsedRecommendation(tuple(seen))


# -- instance files ---------------------------------------------------------------


def instance_to_dict(instance: PromptInstance) -> dict:
    return {
        "instance_id": instance.instance_id,
        "customer_id": instance.customer_id,
        "recommendation_date": instance.recommendation_date.isoformat(),
        "ablation": instance.ablation.value,
        "messages": [{"role": m.role.value, "content": m.content} for m in instance.messages],
    }


def instance_from_dict(data: dict) -> PromptInstance:
    return PromptInstance(
        customer_id=data["customer_id"],
        recommendation_date=parse_iso_date(data["recommendation_date"]),
        ablation=Ablation(data["ablation"]),
        messages=tuple(ChatMessage(Role(m["role"]), m["content"]) for m in data["messages"]),
    )


def save_instance(instance: PromptInstance, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(instance_to_dict(instance), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_instance(path: str | Path) -> PromptInstance:
    return instance_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
