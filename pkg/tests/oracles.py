"""Independent reference implementations used to check the server.

These are written from the delivery/pairing/permission rules directly and
deliberately share no code with the package: brute-force and table-driven
where the server is incremental and event-driven.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class OracleMember:
    user_id: int
    kind: str  # "human" | "bot"
    connected: bool = True
    permissions: frozenset = frozenset()
    hidden: bool = False


def delivery_oracle(event_type: str, actor_id, actor_kind: str, members: list[OracleMember],
                    receiver=None, relay_bot_id=None, scope="room",
                    video_session=False, subject=None, displayed=None) -> set[int]:
    """Who must receive the event, straight from the visibility rules:

    - broadcast messages reach every connected member, sender included
    - private messages reach actor, receiver and bot members
    - in relay (interception) mode, human messages reach only the relay bot
    - impersonated copies are never delivered to the impersonated identity
    - commands and mouse traces reach bot members only
    - typing/keystroke events reach everyone except the typist
    - scoped display updates reach their scope; video session references only
      members holding video_subscribe
    """
    connected = {m.user_id for m in members if m.connected}
    bots = {m.user_id for m in members if m.connected and m.kind == "bot"}

    if event_type in ("text_message", "image_message", "code_issued"):
        if relay_bot_id is not None and actor_kind == "human":
            return {relay_bot_id} & connected
        if receiver is not None:
            allowed = ({actor_id, receiver} | bots) & connected
        else:
            allowed = set(connected)
        if displayed is not None:
            allowed.discard(displayed)
        return allowed
    if event_type == "command":
        return bots
    if event_type == "mouse":
        return bots
    if event_type in ("typing_started", "typing_stopped", "keystroke"):
        return connected - {actor_id}
    if event_type == "bounding_box":
        return connected
    if event_type == "display_update":
        if video_session:
            return {m.user_id for m in members
                    if m.connected and "video_subscribe" in m.permissions}
        if scope == "room":
            return connected
        return {scope} & connected
    if event_type in ("joined", "left"):
        subject_member = next((m for m in members if m.user_id == subject), None)
        if subject_member is not None and subject_member.kind == "bot" and subject_member.hidden:
            return bots
        targets = set(connected)
        if event_type == "left" and subject_member is not None and subject_member.connected:
            targets.add(subject)
        return targets
    return connected


def fifo_pairing_oracle(arrivals: list[int], quota: int) -> tuple[list[tuple[int, ...]], list[int]]:
    """Reference pairing: groups are contiguous prefixes of arrival order."""
    groups = []
    queue = list(arrivals)
    while len(queue) >= quota:
        groups.append(tuple(queue[:quota]))
        queue = queue[quota:]
    return groups, queue


@dataclass
class WaitingSimulation:
    """Discrete-event reference for the concierge: joins, leaves, timeouts."""

    quota: int
    timeout: float
    queue: list[tuple[int, float]] = field(default_factory=list)
    groups: list[tuple[int, ...]] = field(default_factory=list)
    timed_out: list[int] = field(default_factory=list)

    def _expire(self, now: float):
        keep = []
        for user, arrived in self.queue:
            if now - arrived >= self.timeout:
                self.timed_out.append(user)
            else:
                keep.append((user, arrived))
        self.queue = keep

    def join(self, user: int, now: float):
        self._expire(now)
        self.queue.append((user, now))
        while len(self.queue) >= self.quota:
            group = tuple(u for u, _ in self.queue[: self.quota])
            self.queue = self.queue[self.quota:]
            self.groups.append(group)

    def leave(self, user: int, now: float):
        self._expire(now)
        self.queue = [(u, t) for u, t in self.queue if u != user]

    def advance(self, now: float):
        self._expire(now)


def round_robin_oracle(order: list[int], attempts: list[int]) -> list[bool]:
    """Reference automaton: accept iff the attempt comes from the turn holder."""
    accepted = []
    turn = 0
    for speaker in attempts:
        if speaker == order[turn]:
            accepted.append(True)
            turn = (turn + 1) % len(order)
        else:
            accepted.append(False)
    return accepted


def permission_fold_oracle(initial: set, operations: list[tuple[set, set]]) -> set:
    """Reference fold for update_permissions: effective = (current | add) - remove."""
    current = set(initial)
    for add, remove in operations:
        current = (current | add) - remove
    return current


def naive_render_state(initial: dict[str, dict], overrides: list[dict]) -> dict:
    """Final per-element values computed by plain last-writer-wins over the
    initial state (text, src, class, visible, attributes per element id)."""
    state = {eid: {**fields, "attributes": dict(fields.get("attributes", {}))}
             for eid, fields in initial.items()}
    for override in overrides:
        eid = override.get("element_id")
        if eid not in state:
            continue
        mutation, value = override["mutation"], override.get("value")
        if mutation == "set_text":
            state[eid]["text"] = value
        elif mutation == "set_image_src":
            state[eid]["src"] = value
        elif mutation == "set_class":
            state[eid]["class"] = value
        elif mutation == "set_visible":
            state[eid]["visible"] = bool(value)
        elif mutation == "set_attribute":
            state[eid]["attributes"][value["name"]] = value["value"]
    return state


def flatten_render(tree: dict) -> dict:
    """Project a rendered layout tree onto the oracle's per-element map."""
    state = {}

    def walk(nodes):
        for node in nodes:
            if node["id"] is not None:
                state[node["id"]] = {
                    "text": node["text"],
                    "src": node["src"],
                    "class": node["class"],
                    "visible": node["visible"],
                    "attributes": dict(node["attributes"]),
                }
            walk(node["children"])

    walk(tree["elements"])
    return state
