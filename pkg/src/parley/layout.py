"""Declarative room layouts: parse the JSON document format into a validated
model and render the client-facing element tree.

A layout document looks like::

    {
      "title": "Box Task Room",
      "html": [
        {"layout-type": "div", "style": "...", "layout-content": [
            {"layout-type": "image", "id": "drawing-area"}
        ]}
      ],
      "scripts": {"incoming-text": "markdown", "plain": "bounding-boxes"}
    }

Parsing is strict: unknown keys, unknown script slots, unknown plugin names,
duplicate element ids and over-deep nesting are rejected with a path to the
offending node, so misconfigured experiments fail loudly instead of running
with silently dropped settings.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

MAX_NESTING_DEPTH = 32

# Closed set of script slots the client knows how to bind. "plain" loads a
# plugin with no event binding.
SCRIPT_SLOTS = frozenset({
    "incoming-text",
    "incoming-image",
    "submit-message",
    "print-history",
    "typing-users",
    "plain",
})

# Client plugins that may be named in a layout's scripts block.
PLUGIN_NAMES = frozenset({
    "display-text",
    "display-image",
    "send-message",
    "plain-history",
    "markdown",
    "markdown-history",
    "typing-users",
    "live-typing",
    "bounding-boxes",
    "mouse-tracking",
})

# Element kinds rendered without the unsafe_html escape hatch. Arbitrary
# markup is forbidden by default to keep rendered documents script-safe.
SAFE_ELEMENT_KINDS = frozenset({
    "div",
    "span",
    "p",
    "br",
    "button",
    "image",
    "audio controls",
    "video controls",
})

ELEMENT_KEYS = frozenset({"layout-type", "layout-content", "id", "style", "src", "autoplay"})
DOCUMENT_KEYS = frozenset({"title", "html", "scripts"})


class DisplayMutation(str, enum.Enum):
    """Mutations a display_update event may apply to a rendered element."""

    SET_TEXT = "set_text"
    SET_IMAGE_SRC = "set_image_src"
    SET_ATTRIBUTE = "set_attribute"
    SET_CLASS = "set_class"
    SET_VISIBLE = "set_visible"


# Mutations that only make sense for media elements.
MEDIA_KINDS = frozenset({"image", "audio controls", "video controls"})
TEXT_KINDS = frozenset({"div", "span", "p", "button"})


class LayoutError(ValueError):
    """Validation failure, carrying the path of the offending node."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}")
        self.message = message
        self.path = path


@dataclass
class ElementSpec:
    kind: str
    id: Optional[str] = None
    style: Optional[str] = None
    src: Optional[str] = None
    autoplay: Optional[bool] = None
    children: list["ElementSpec"] = field(default_factory=list)


@dataclass
class LayoutDocument:
    title: str
    elements: list[ElementSpec] = field(default_factory=list)
    scripts: dict[str, str] = field(default_factory=dict)

    def element_ids(self) -> set[str]:
        ids: set[str] = set()

        def walk(elements):
            for el in elements:
                if el.id is not None:
                    ids.add(el.id)
                walk(el.children)

        walk(self.elements)
        return ids


# Layout used for rooms created without one: chat history and input only.
DEFAULT_LAYOUT_DOCUMENT = {
    "title": "Chat",
    "scripts": {
        "incoming-text": "display-text",
        "incoming-image": "display-image",
        "submit-message": "send-message",
        "print-history": "plain-history",
    },
}


def _parse_autoplay(value, path: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false"):
        return value.lower() == "true"
    raise LayoutError("autoplay must be a boolean or 'true'/'false'", path)


def _parse_element(node, path: str, depth: int, seen_ids: dict, unsafe_html: bool) -> ElementSpec:
    if depth > MAX_NESTING_DEPTH:
        raise LayoutError(f"nesting deeper than {MAX_NESTING_DEPTH}", path)
    if not isinstance(node, dict):
        raise LayoutError("element must be an object", path)
    for key in node:
        if key not in ELEMENT_KEYS:
            raise LayoutError(f"unknown element key {key!r}", f"{path}.{key}")

    kind = node.get("layout-type")
    if not isinstance(kind, str) or not kind:
        raise LayoutError("layout-type must be a non-empty string", f"{path}.layout-type")
    if not unsafe_html and kind not in SAFE_ELEMENT_KINDS:
        raise LayoutError(
            f"element kind {kind!r} not allowed (enable unsafe_html to permit arbitrary kinds)",
            f"{path}.layout-type",
        )

    element_id = node.get("id")
    if element_id is not None:
        if not isinstance(element_id, str) or not element_id:
            raise LayoutError("id must be a non-empty string", f"{path}.id")
        if element_id in seen_ids:
            raise LayoutError(f"duplicate element id {element_id!r}", f"{path}.id")
        seen_ids[element_id] = path

    style = node.get("style")
    if style is not None and not isinstance(style, str):
        raise LayoutError("style must be a string", f"{path}.style")

    src = node.get("src")
    if src is not None and not isinstance(src, str):
        raise LayoutError("src must be a string", f"{path}.src")

    autoplay = None
    if "autoplay" in node:
        autoplay = _parse_autoplay(node["autoplay"], f"{path}.autoplay")

    children = []
    if "layout-content" in node:
        content = node["layout-content"]
        if not isinstance(content, list):
            raise LayoutError("layout-content must be a list", f"{path}.layout-content")
        for i, child in enumerate(content):
            children.append(
                _parse_element(child, f"{path}.layout-content[{i}]", depth + 1, seen_ids, unsafe_html)
            )

    return ElementSpec(kind=kind, id=element_id, style=style, src=src, autoplay=autoplay, children=children)


def parse_layout(document, unsafe_html: bool = False) -> LayoutDocument:
    """Validate a layout document (dict or JSON string) into a LayoutDocument.

    Raises LayoutError with a path like ``html[1].id`` or ``scripts.incoming-video``
    on the first violation found.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise LayoutError(f"not valid JSON: {e}", "$") from None
    if not isinstance(document, dict):
        raise LayoutError("layout document must be an object", "$")

    for key in document:
        if key not in DOCUMENT_KEYS:
            raise LayoutError(f"unknown document key {key!r}", key)

    title = document.get("title")
    if not isinstance(title, str) or not title:
        raise LayoutError("title must be a non-empty string", "title")

    seen_ids: dict = {}
    elements = []
    if "html" in document:
        html = document["html"]
        if not isinstance(html, list):
            raise LayoutError("html must be a list of elements", "html")
        for i, node in enumerate(html):
            elements.append(_parse_element(node, f"html[{i}]", 1, seen_ids, unsafe_html))

    scripts: dict[str, str] = {}
    if "scripts" in document:
        raw_scripts = document["scripts"]
        if not isinstance(raw_scripts, dict):
            raise LayoutError("scripts must be a map of slot to plugin", "scripts")
        for slot, plugin in raw_scripts.items():
            if slot not in SCRIPT_SLOTS:
                raise LayoutError(f"unknown script slot {slot!r}", f"scripts.{slot}")
            if plugin not in PLUGIN_NAMES:
                raise LayoutError(f"unknown plugin {plugin!r}", f"scripts.{slot}")
            scripts[slot] = plugin

    return LayoutDocument(title=title, elements=elements, scripts=scripts)


def serialize_layout(layout: LayoutDocument) -> dict:
    """Inverse of parse_layout on the model: parse(serialize(x)) == x."""

    def element_to_dict(el: ElementSpec) -> dict:
        node: dict[str, Any] = {"layout-type": el.kind}
        if el.id is not None:
            node["id"] = el.id
        if el.style is not None:
            node["style"] = el.style
        if el.src is not None:
            node["src"] = el.src
        if el.autoplay is not None:
            node["autoplay"] = el.autoplay
        if el.children:
            node["layout-content"] = [element_to_dict(c) for c in el.children]
        return node

    doc: dict[str, Any] = {"title": layout.title}
    if layout.elements:
        doc["html"] = [element_to_dict(el) for el in layout.elements]
    if layout.scripts:
        doc["scripts"] = dict(layout.scripts)
    return doc


def _render_element(el: ElementSpec) -> dict:
    return {
        "kind": el.kind,
        "id": el.id,
        "style": el.style,
        "src": el.src if el.src is not None else ("" if el.kind in MEDIA_KINDS else None),
        "autoplay": el.autoplay,
        "text": None,
        "class": None,
        "attributes": {},
        "visible": True,
        "children": [_render_element(c) for c in el.children],
    }


def _index_by_id(tree: list[dict]) -> dict[str, dict]:
    index: dict[str, dict] = {}

    def walk(nodes):
        for node in nodes:
            if node["id"] is not None:
                index[node["id"]] = node
            walk(node["children"])

    walk(tree)
    return index


def apply_mutation(node: dict, mutation: str, value) -> None:
    if mutation == DisplayMutation.SET_TEXT:
        node["text"] = value
    elif mutation == DisplayMutation.SET_IMAGE_SRC:
        node["src"] = value
    elif mutation == DisplayMutation.SET_ATTRIBUTE:
        node["attributes"][value["name"]] = value["value"]
    elif mutation == DisplayMutation.SET_CLASS:
        node["class"] = value
    elif mutation == DisplayMutation.SET_VISIBLE:
        node["visible"] = bool(value)
    else:
        raise ValueError(f"unknown mutation {mutation!r}")


def render(layout: LayoutDocument, overrides: Iterable[dict] = ()) -> dict:
    """Produce the deterministic client-facing element tree.

    ``overrides`` is the fold of display_update event payloads, applied in
    event order; same inputs always yield the same output. Payloads that do
    not target a layout element (e.g. video session announcements) are skipped.
    """
    tree = [_render_element(el) for el in layout.elements]
    index = _index_by_id(tree)
    for override in overrides:
        element_id = override.get("element_id")
        if element_id is None:
            continue
        node = index.get(element_id)
        if node is None:
            continue
        apply_mutation(node, override["mutation"], override.get("value"))
    return {
        "title": layout.title,
        "elements": tree,
        "scripts": dict(layout.scripts),
    }


def validate_mutation_for_kind(kind: str, mutation: str) -> bool:
    """Whether a mutation makes sense for an element kind (emit-time check)."""
    if mutation == DisplayMutation.SET_IMAGE_SRC:
        return kind in MEDIA_KINDS
    if mutation == DisplayMutation.SET_TEXT:
        return kind in TEXT_KINDS
    return True
