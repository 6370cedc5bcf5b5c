"""Domain model rules: permission checks and room admission."""

import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from parley.model import (
    ALL_PERMISSIONS,
    Permission,
    Room,
    Token,
    User,
    UserKind,
    can_join,
    check_permission,
    parse_permissions,
)


def _token(perms, revoked=False):
    return Token(id="t", permissions=set(perms), login_room_id="lobby", revoked=revoked)


def _user(kind, rooms=()):
    return User(id=1, display_name="u", kind=kind, token_id="t", rooms=set(rooms))


class TestCheckPermission:
    def test_member_flag_allowed(self):
        assert check_permission(_token({Permission.SEND_TEXT}), Permission.SEND_TEXT) is True

    def test_non_member_flag_denied(self):
        assert check_permission(_token({Permission.SEND_TEXT}), Permission.SEND_PRIVATE) is False

    def test_revoked_token_never_authorizes(self):
        token = _token(set(Permission), revoked=True)
        assert all(not check_permission(token, flag) for flag in Permission)

    def test_missing_token_denied(self):
        assert check_permission(None, Permission.SEND_TEXT) is False

    def test_flag_count_is_fourteen(self):
        assert len(ALL_PERMISSIONS) == 14

    def test_exhaustive_subsets_match_set_membership(self):
        # all permission subsets of size <= 3, checked against every flag
        flags = sorted(Permission, key=lambda p: p.value)
        subsets = [()]
        for size in (1, 2, 3):
            subsets.extend(itertools.combinations(flags, size))
        assert len(subsets) == 1 + 14 + 91 + 364
        for subset in subsets:
            token = _token(set(subset))
            for action in flags:
                assert check_permission(token, action) == (action in subset)

    @given(
        perms=st.sets(st.sampled_from(sorted(Permission, key=lambda p: p.value))),
        action=st.sampled_from(sorted(Permission, key=lambda p: p.value)),
        revoked=st.booleans(),
    )
    def test_random_sets_match_membership_oracle(self, perms, action, revoked):
        token = _token(perms, revoked=revoked)
        expected = (not revoked) and (action in perms)
        assert check_permission(token, action) == expected


class TestParsePermissions:
    def test_round_trips_names(self):
        assert parse_permissions(["send_text", "room_admin"]) == {
            Permission.SEND_TEXT, Permission.ROOM_ADMIN,
        }

    def test_unknown_name_fails_loudly(self):
        with pytest.raises(ValueError, match="unknown permission"):
            parse_permissions(["send_txet"])


class TestCanJoin:
    def test_human_with_no_room_allowed(self):
        assert can_join(_user(UserKind.HUMAN), Room(id="a", layout_id=None)) is True

    def test_human_in_one_room_denied_second(self):
        user = _user(UserKind.HUMAN, rooms={"a"})
        assert can_join(user, Room(id="b", layout_id=None)) is False

    def test_human_rejoin_same_room_is_idempotent(self):
        user = _user(UserKind.HUMAN, rooms={"a"})
        assert can_join(user, Room(id="a", layout_id=None)) is True

    def test_bot_in_three_rooms_joins_fourth(self):
        user = _user(UserKind.BOT, rooms={"a", "b", "c"})
        assert can_join(user, Room(id="d", layout_id=None)) is True

    @given(
        kind=st.sampled_from([UserKind.HUMAN, UserKind.BOT]),
        rooms=st.sets(st.sampled_from(["a", "b", "c", "d"]), max_size=4),
        target=st.sampled_from(["a", "b", "c", "d", "e"]),
    )
    def test_matches_single_room_rule(self, kind, rooms, target):
        user = _user(kind, rooms=rooms)
        expected = (
            target in rooms
            or kind is UserKind.BOT
            or len(rooms) == 0
        )
        assert can_join(user, Room(id=target, layout_id=None)) == expected
