"""Example bots end to end: Echo, DiTo, Moderator round-robin, Relay interception."""

import asyncio
import random
import string
import time
import uuid
from pathlib import Path

import pytest

from parley.bots.dito import DiToBot
from parley.bots.echo import EchoBot
from parley.bots.moderator import ModeratorBot, RelayBot

from .harness import Collector, eventually, get_logs, make_room, make_token
from .oracles import round_robin_oracle

pytestmark = pytest.mark.anyio

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures" / "layouts"

HUMAN_PERMS = ["send_text", "send_command", "send_private", "typing_events"]
DITO_PERMS = ["room_admin", "layout_modify", "send_text", "send_private"]
MODERATOR_PERMS = ["token_admin", "send_text", "send_private"]
RELAY_PERMS = ["room_admin", "send_text", "send_private", "send_impersonated"]

IMAGE_PAIRS = [
    ("https://img.example.org/a1.png", "https://img.example.org/b1.png"),
    ("https://img.example.org/a2.png", "https://img.example.org/b2.png"),
]


def rid() -> str:
    return "b-" + uuid.uuid4().hex[:10]


class TestEchoTranscript:
    async def test_alternating_transcript_with_random_strings(self, server, connect):
        room = await make_room(server, rid())
        bot_client = await connect(server, await make_token(
            server, ["send_text", "send_private"], room=room, bot=True), name="echo")
        EchoBot(bot_client)
        human = await connect(server, await make_token(server, HUMAN_PERMS, room=room),
                              name="human")
        seen = Collector("text_message")
        human.on("text_message", seen)
        rng = random.Random(11)
        sent = []
        for i in range(200):
            text = "".join(rng.choices(string.ascii_letters + " ", k=rng.randint(1, 40)))
            sent.append(text)
            assert (await human.send_text(room, text)).ok
            await eventually(lambda: len(seen.frames) == 2 * (i + 1), timeout=10)
        transcript = [(f["actor"]["kind"], f["payload"]["text"]) for f in seen.frames]
        expected = []
        for text in sent:
            expected.append(("human", text))
            expected.append(("bot", text))
        assert transcript == expected


async def setup_dito(server, connect):
    """Waiting room, dito task, concierge and dito bot, ready to pair players."""
    from parley.bots.concierge import ConciergeBot

    waiting = await make_room(server, rid())
    async with server.admin_client() as api:
        layout = await api.post(
            "/api/v1/layouts", content=(FIXTURES / "dito.json").read_text(),
            headers={"Content-Type": "application/json"})
        layout_id = layout.json()["id"]
        task = await api.post("/api/v1/tasks", json={
            "name": "dito", "num_users": 2, "layout_id": layout_id,
        })
        task_id = task.json()["id"]

    concierge_client = await connect(server, await make_token(
        server, ["room_admin", "send_text", "send_private"], room=waiting, bot=True),
        name="concierge")
    concierge = ConciergeBot(concierge_client, waiting)
    await concierge.start()

    dito_client = await connect(server, await make_token(
        server, DITO_PERMS, room=waiting, bot=True), name="dito")
    dito = DiToBot(dito_client, task_id, IMAGE_PAIRS)
    return waiting, task_id, concierge, dito


async def join_players(server, connect, waiting, task_id, names):
    players = []
    for name in names:
        token = await make_token(server, HUMAN_PERMS, room=waiting, task_id=task_id)
        players.append(await connect(server, token, name=name))
    return players


class TestDiTo:
    async def test_full_game_flow(self, server, connect):
        waiting, task_id, concierge, dito = await setup_dito(server, connect)
        p1, p2 = await join_players(server, connect, waiting, task_id, ["ann", "ben"])
        displays = {p1.user_id: Collector("display_update"),
                    p2.user_id: Collector("display_update")}
        texts = {p1.user_id: Collector("text_message"), p2.user_id: Collector("text_message")}
        codes = {p1.user_id: Collector("code_issued"), p2.user_id: Collector("code_issued")}
        for player in (p1, p2):
            player.on("display_update", displays[player.user_id])
            player.on("text_message", texts[player.user_id])
            player.on("code_issued", codes[player.user_id])

        await eventually(lambda: concierge.rooms_created, timeout=10)
        room = concierge.rooms_created[0]
        await eventually(lambda: dito.games.get(room) and dito.games[room].phase == "awaiting_ready",
                         timeout=10)
        game = dito.games[room]
        assert set(game.players) == {p1.user_id, p2.user_id}

        # per-user display updates: each player got exactly one, with a different image
        await eventually(lambda: displays[p1.user_id].frames and displays[p2.user_id].frames)
        url1 = displays[p1.user_id].frames[0]["payload"]["value"]
        url2 = displays[p2.user_id].frames[0]["payload"]["value"]
        assert url1 != url2
        assert {url1, url2} == set(IMAGE_PAIRS[0])

        # rendered views differ per player (late-join render inspection)
        core = server.core
        render1 = core.render_for(core.users[p1.user_id], core.rooms[room])
        render2 = core.render_for(core.users[p2.user_id], core.rooms[room])
        src1 = render1["elements"][0]["children"][0]["src"]
        src2 = render2["elements"][0]["children"][0]["src"]
        assert src1 == url1 and src2 == url2 and src1 != src2

        # premature answer: private corrective message, no phase change
        assert (await p1.send_command(room, "difference", ["too", "soon"])).ok
        await eventually(lambda: any(
            f.get("receiver") == p1.user_id for f in texts[p1.user_id].frames))
        assert dito.games[room].phase == "awaiting_ready"

        # double /ready is idempotent
        await p1.send_command(room, "ready")
        await p1.send_command(room, "ready")
        await eventually(lambda: dito.games[room].ready == {p1.user_id})
        assert dito.games[room].phase == "awaiting_ready"
        await p2.send_command(room, "ready")
        await eventually(lambda: dito.games[room].phase == "discussing")

        # solution closes the room and issues one code per player
        await p1.send_command(room, "difference", ["left", "cube", "is", "red"])
        await eventually(lambda: dito.games[room].phase == "done")
        await eventually(lambda: codes[p1.user_id].frames and codes[p2.user_id].frames)
        code1 = codes[p1.user_id].frames[0]["payload"]["code"]
        code2 = codes[p2.user_id].frames[0]["payload"]["code"]
        assert len(code1) == len(code2) == 10 and code1 != code2
        assert server.core.rooms[room].read_only is True
        assert dito.games[room].solution == "left cube is red"

        # text after completion is rejected (room closed)
        receipt = await p1.send_text(room, "one more thing")
        assert not receipt.ok and receipt.error_code == "read_only"

        # safety: codes only in rooms whose log holds a /difference command
        logs = await get_logs(server, room)
        code_seqs = [e["seq"] for e in logs if e["type"] == "code_issued"]
        diff_seqs = [e["seq"] for e in logs if e["type"] == "command"
                     and e["payload"]["command"] == "difference"]
        assert code_seqs and diff_seqs and min(diff_seqs) < min(code_seqs)

    async def test_second_room_uses_next_image_pair(self, server, connect):
        waiting, task_id, concierge, dito = await setup_dito(server, connect)
        await join_players(server, connect, waiting, task_id, ["p1", "p2", "p3", "p4"])
        await eventually(lambda: len(concierge.rooms_created) == 2, timeout=10)
        await eventually(lambda: len(dito.games) == 2, timeout=10)
        pairs = {game.image_pair for game in dito.games.values()}
        assert pairs == set(IMAGE_PAIRS[:2])


class TestModerator:
    async def setup_round_robin(self, server, connect, attempts=100, seed=3):
        room = await make_room(server, rid())
        a = await connect(server, await make_token(server, HUMAN_PERMS, room=room), name="A")
        b = await connect(server, await make_token(server, HUMAN_PERMS, room=room), name="B")
        mod_client = await connect(server, await make_token(
            server, MODERATOR_PERMS, room=room, bot=True), name="mod")
        moderator = ModeratorBot(mod_client, room, order=[a.user_id, b.user_id])
        await moderator.start()
        return room, a, b, moderator

    async def test_alternating_turns_all_accepted(self, server, connect):
        room, a, b, moderator = await self.setup_round_robin(server, connect)
        for speaker in (a, b, a):
            receipt = await speaker.send_text(room, "my turn")
            assert receipt.ok
            await self._wait_rotation(server, room, receipt.seq)

    async def _wait_rotation(self, server, room, after_seq):
        # rotation shows up as two permission_update events after the accepted message
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline:
            logs = await get_logs(server, room, since=after_seq)
            if sum(1 for e in logs if e["type"] == "permission_update") >= 2:
                return
            await asyncio.sleep(0.01)
        raise AssertionError("moderator did not rotate the turn")

    async def test_out_of_turn_rejected_and_reminded(self, server, connect):
        room, a, b, moderator = await self.setup_round_robin(server, connect)
        reminders = Collector("text_message")
        b.on("text_message", reminders)
        receipt = await b.send_text(room, "me first!")
        assert not receipt.ok and receipt.error_code == "permission_denied"
        logs = await get_logs(server, room)
        assert not any(e["type"] == "text_message" and e["actor"] == b.user_id for e in logs)
        await eventually(lambda: any(
            f.get("receiver") == b.user_id and "turn" in f["payload"]["text"]
            for f in reminders.frames))

    async def test_random_attempts_match_automaton(self, server, connect):
        room, a, b, moderator = await self.setup_round_robin(server, connect)
        clients = {a.user_id: a, b.user_id: b}
        order = [a.user_id, b.user_id]
        rng = random.Random(17)
        attempts, accepted = [], []
        for i in range(100):
            speaker_id = rng.choice(order)
            attempts.append(speaker_id)
            receipt = await clients[speaker_id].send_text(room, f"attempt {i}")
            accepted.append(receipt.ok)
            if receipt.ok:
                await self._wait_rotation(server, room, receipt.seq)
        assert accepted == round_robin_oracle(order, attempts)


class TestRelay:
    async def setup_relay(self, server, connect, drop=None, transform=None):
        room = await make_room(server, rid())
        a = await connect(server, await make_token(server, HUMAN_PERMS, room=room), name="A")
        b = await connect(server, await make_token(server, HUMAN_PERMS, room=room), name="B")
        relay_client = await connect(server, await make_token(
            server, RELAY_PERMS, room=room, bot=True), name="relay")
        relay = RelayBot(relay_client, room, drop=drop, transform=transform)
        await relay.start()
        return room, a, b, relay

    async def test_identity_forwarding_delivers_exactly_once(self, server, connect):
        room, a, b, relay = await self.setup_relay(server, connect)
        b_seen = Collector("text_message")
        b.on("text_message", b_seen)
        assert (await a.send_text(room, "x")).ok
        await eventually(lambda: b_seen.texts() == ["x"])
        frame = b_seen.frames[0]
        assert frame["actor"]["id"] == a.user_id  # impersonated authorship
        # log holds both the trapped original and the bot's forward
        logs = await get_logs(server, room)
        texts = [e for e in logs if e["type"] == "text_message"]
        assert len(texts) == 2
        original, forward = texts
        assert original["actor"] == a.user_id and original["receiver"] == relay.client.user_id
        assert forward["actor"] == relay.client.user_id
        assert forward["displayed_actor"] == a.user_id

    async def test_dropped_messages_never_reach_addressee(self, server, connect):
        room, a, b, relay = await self.setup_relay(
            server, connect, drop=lambda text: "secret" in text)
        b_seen = Collector("text_message")
        b.on("text_message", b_seen)
        await a.send_text(room, "hello there")
        await a.send_text(room, "my secret plan")
        await a.send_text(room, "goodbye")
        await eventually(lambda: b_seen.texts() == ["hello there", "goodbye"], timeout=10)
        assert relay.dropped == ["my secret plan"]
        # the original is still in the log, with true authorship
        logs = await get_logs(server, room)
        originals = [e for e in logs if e["type"] == "text_message"
                     and e["actor"] == a.user_id and e["payload"]["text"] == "my secret plan"]
        assert len(originals) == 1

    async def test_inserted_messages_count(self, server, connect):
        room, a, b, relay = await self.setup_relay(server, connect)
        b_seen = Collector("text_message")
        b.on("text_message", b_seen)
        await a.send_text(room, "real one")
        await eventually(lambda: b_seen.texts() == ["real one"])
        await relay.insert(a.user_id, "phantom")
        await eventually(lambda: b_seen.texts() == ["real one", "phantom"])
        assert len(b_seen.texts()) == len(relay.forwarded) + len(relay.inserted)
        phantom = b_seen.frames[-1]
        assert phantom["actor"]["id"] == a.user_id

    async def test_private_intent_is_preserved(self, server, connect):
        room, a, b, relay = await self.setup_relay(server, connect)
        c = await connect(server, await make_token(server, HUMAN_PERMS, room=room), name="C")
        b_seen, c_seen = Collector("text_message"), Collector("text_message")
        b.on("text_message", b_seen)
        c.on("text_message", c_seen)
        assert (await a.send_text(room, "just for you", to=b.user_id)).ok
        await eventually(lambda: b_seen.texts() == ["just for you"])
        assert b_seen.frames[0].get("receiver") == b.user_id
        await a.send_text(room, "everyone sees this")
        await eventually(lambda: "everyone sees this" in c_seen.texts())
        assert "just for you" not in c_seen.texts()

    async def test_transform_rewrites_content(self, server, connect):
        room, a, b, relay = await self.setup_relay(
            server, connect, transform=lambda text: text.upper())
        b_seen = Collector("text_message")
        b.on("text_message", b_seen)
        await a.send_text(room, "quiet words")
        await eventually(lambda: b_seen.texts() == ["QUIET WORDS"])
