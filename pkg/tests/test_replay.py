"""Replay state machine: log streams reconstruct state; structure is verified."""

import pytest

from parley.eventlog import LogEntry
from parley.replay import ReplayError, ReplayState, replay_ndjson


def entry(seq, type, payload, room="r", actor="system", time=None, receiver=None):
    return LogEntry(
        room=room, seq=seq, time=time or f"2024-01-01T00:00:{seq:02d}.000Z",
        actor=actor, type=type, payload=payload, receiver=receiver,
    )


def joined(seq, user_id, reason, permissions=("send_text",), **kw):
    return entry(seq, "joined", {
        "user": {"id": user_id, "name": f"u{user_id}", "kind": "human",
                 "permissions": list(permissions), "task_id": None},
        "reason": reason,
    }, **kw)


def left(seq, user_id, reason, **kw):
    return entry(seq, "left", {
        "user": {"id": user_id, "name": f"u{user_id}", "kind": "human",
                 "permissions": [], "task_id": None},
        "reason": reason,
    }, **kw)


class TestMembershipFold:
    def test_login_join_adds_member(self):
        state = ReplayState().apply_all([joined(1, 7, "login")])
        assert state.rooms["r"].members == {7}

    def test_disconnect_keeps_membership(self):
        state = ReplayState().apply_all([
            joined(1, 7, "login"),
            left(2, 7, "disconnect"),
        ])
        assert state.rooms["r"].members == {7}

    def test_reconnect_changes_nothing(self):
        state = ReplayState().apply_all([
            joined(1, 7, "login"),
            left(2, 7, "disconnect"),
            joined(3, 7, "reconnect"),
        ])
        assert state.rooms["r"].members == {7}

    def test_moved_removes_membership(self):
        state = ReplayState().apply_all([
            joined(1, 7, "login"),
            left(2, 7, "moved"),
        ])
        assert state.rooms["r"].members == set()


class TestPermissionFold:
    def test_join_seeds_permissions_then_updates_fold(self):
        state = ReplayState().apply_all([
            joined(1, 7, "login", permissions=("send_text",)),
            entry(2, "permission_update", {
                "user": 7, "added": ["annotate"], "removed": [],
                "effective": ["annotate", "send_text"], "revoked": False,
            }),
        ])
        assert state.rooms["r"].permissions[7] == frozenset({"annotate", "send_text"})


class TestDisplayAndClose:
    def test_display_fold_respects_scope(self):
        state = ReplayState().apply_all([
            joined(1, 7, "login"),
            entry(2, "display_update", {"element_id": "img", "mutation": "set_image_src",
                                        "value": "a.png", "scope": "room"}),
            entry(3, "display_update", {"element_id": "img", "mutation": "set_image_src",
                                        "value": "b.png", "scope": 7}),
        ])
        room = state.rooms["r"]
        assert [o["value"] for o in room.display_overrides()] == ["a.png"]
        assert [o["value"] for o in room.display_overrides(7)] == ["a.png", "b.png"]

    def test_room_closed_sets_read_only(self):
        state = ReplayState().apply_all([entry(1, "room_closed", {"room": "r"})])
        assert state.rooms["r"].read_only is True

    def test_typing_folds_to_stopped_after_disconnect_pattern(self):
        state = ReplayState().apply_all([
            joined(1, 7, "login"),
            entry(2, "typing_started", {}, actor=7),
            entry(3, "typing_stopped", {"synthesized": True}, actor=7),
            left(4, 7, "disconnect"),
        ])
        assert state.rooms["r"].typing == set()


class TestStructuralChecks:
    def test_seq_gap_rejected(self):
        state = ReplayState()
        state.apply(joined(1, 7, "login"))
        with pytest.raises(ReplayError, match="seq gap"):
            state.apply(left(3, 7, "moved"))

    def test_timestamp_regression_rejected(self):
        state = ReplayState()
        state.apply(joined(1, 7, "login", time="2024-01-01T00:00:05.000Z"))
        with pytest.raises(ReplayError, match="backwards"):
            state.apply(left(2, 7, "moved", time="2024-01-01T00:00:04.999Z"))

    def test_ndjson_stream_round_trip(self):
        stream = "\n".join(e.to_json_line() for e in [
            joined(1, 7, "login"),
            entry(2, "text_message", {"text": "hi"}, actor=7),
            left(3, 7, "moved"),
        ])
        state = replay_ndjson(stream)
        assert state.rooms["r"].last_seq == 3
        assert state.rooms["r"].members == set()
