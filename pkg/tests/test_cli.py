"""Operator CLI: serve, load fixtures, mint tokens; crash durability."""

import asyncio
import json
import os
import signal
import sys

import httpx
import pytest

from parley.bots.sdk import BotClient

from .harness import free_port

pytestmark = pytest.mark.anyio

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")


class ServeProcess:
    def __init__(self, port: int, data_dir: str):
        self.port = port
        self.data_dir = data_dir
        self.proc: asyncio.subprocess.Process | None = None
        self.admin_token: str | None = None

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    async def start(self):
        self.proc = await asyncio.create_subprocess_exec(
            sys.executable, "-u", "-m", "parley", "serve",
            "--port", str(self.port), "--data-dir", self.data_dir,
            stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.STDOUT,
        )
        while True:
            line = await asyncio.wait_for(self.proc.stdout.readline(), timeout=30)
            if not line:
                raise RuntimeError("server exited during startup")
            text = line.decode()
            if text.startswith("admin token:"):
                self.admin_token = text.split(":", 1)[1].strip()
            if "Uvicorn running" in text or "Application startup complete" in text:
                break
        for _ in range(100):
            try:
                async with httpx.AsyncClient() as probe:
                    response = await probe.get(f"{self.base_url}/health", timeout=2)
                if response.status_code == 200:
                    return self
            except httpx.HTTPError:
                await asyncio.sleep(0.05)
        raise RuntimeError("server never became healthy")

    async def kill(self):
        if self.proc and self.proc.returncode is None:
            self.proc.send_signal(signal.SIGKILL)
            await self.proc.wait()

    async def terminate(self):
        if self.proc and self.proc.returncode is None:
            self.proc.terminate()
            try:
                await asyncio.wait_for(self.proc.wait(), timeout=10)
            except asyncio.TimeoutError:
                self.proc.kill()
                await self.proc.wait()


async def run_cli(*args: str) -> tuple[int, str]:
    proc = await asyncio.create_subprocess_exec(
        sys.executable, "-u", "-m", "parley", *args,
        stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.STDOUT,
    )
    out, _ = await proc.communicate()
    return proc.returncode, out.decode()


class TestServe:
    async def test_default_run_serves_health_and_prints_token_once(self, tmp_path):
        serve = ServeProcess(free_port(), str(tmp_path / "data"))
        await serve.start()
        try:
            assert serve.admin_token
            async with httpx.AsyncClient() as api:
                health = await api.get(f"{serve.base_url}/health")
                assert health.json() == {"status": "ok"}
                # the admin token works against the API
                created = await api.post(
                    f"{serve.base_url}/api/v1/rooms", json={"id": "cli-room"},
                    headers={"Authorization": f"Bearer {serve.admin_token}"})
                assert created.status_code == 201
        finally:
            await serve.terminate()

    async def test_port_in_use_exits_nonzero(self, tmp_path):
        port = free_port()
        first = ServeProcess(port, str(tmp_path / "one"))
        await first.start()
        try:
            code, out = await run_cli("serve", "--port", str(port),
                                      "--data-dir", str(tmp_path / "two"))
            assert code == 1
            assert "cannot bind" in out
        finally:
            await first.terminate()

    async def test_restart_restores_rooms_and_tokens(self, tmp_path):
        port = free_port()
        serve = ServeProcess(port, str(tmp_path / "data"))
        await serve.start()
        auth = {"Authorization": f"Bearer {serve.admin_token}"}
        async with httpx.AsyncClient(base_url=serve.base_url, headers=auth) as api:
            await api.post("/api/v1/rooms", json={"id": "sticky"})
            token = (await api.post("/api/v1/tokens", json={
                "permissions": ["send_text"], "login_room_id": "sticky", "uses": 3,
            })).json()["id"]
        await serve.terminate()

        again = ServeProcess(port, str(tmp_path / "data"))
        await again.start()
        try:
            client = BotClient(again.base_url, token, name="survivor")
            await client.connect()
            assert "sticky" in client.rooms
            receipt = await client.send_text("sticky", "back again")
            assert receipt.ok
            await client.disconnect()
        finally:
            await again.terminate()

    async def test_kill_between_ack_and_restart_loses_nothing(self, tmp_path):
        port = free_port()
        serve = ServeProcess(port, str(tmp_path / "data"))
        await serve.start()
        auth = {"Authorization": f"Bearer {serve.admin_token}"}
        async with httpx.AsyncClient(base_url=serve.base_url, headers=auth) as api:
            await api.post("/api/v1/rooms", json={"id": "durable"})
            token = (await api.post("/api/v1/tokens", json={
                "permissions": ["send_text"], "login_room_id": "durable",
            })).json()["id"]
        client = BotClient(serve.base_url, token, name="writer", reconnect=False)
        await client.connect()
        for i in range(20):
            receipt = await client.send_text("durable", f"acked {i}")
            assert receipt.ok
        await serve.kill()  # SIGKILL: no flush, no graceful shutdown
        try:
            await asyncio.wait_for(client.disconnect(), timeout=5)
        except (asyncio.TimeoutError, Exception):
            pass

        again = ServeProcess(port, str(tmp_path / "data"))
        await again.start()
        try:
            auth = {"Authorization": f"Bearer {again.admin_token}"}
            async with httpx.AsyncClient(base_url=again.base_url, headers=auth) as api:
                logs = (await api.get("/api/v1/rooms/durable/logs")).json()
            texts = [e["payload"]["text"] for e in logs if e["type"] == "text_message"]
            assert texts == [f"acked {i}" for i in range(20)]
        finally:
            await again.terminate()


class TestLoad:
    async def test_load_single_layout_file(self, tmp_path):
        serve = ServeProcess(free_port(), str(tmp_path / "data"))
        await serve.start()
        try:
            code, out = await run_cli(
                "load", os.path.join(FIXTURES, "layouts", "minimal_chat.json"),
                "--api-url", serve.base_url, "--token", serve.admin_token)
            assert code == 0, out
            assert out.startswith("layout: ")
        finally:
            await serve.terminate()

    async def test_load_bundle_prints_login_urls(self, tmp_path):
        serve = ServeProcess(free_port(), str(tmp_path / "data"))
        await serve.start()
        try:
            code, out = await run_cli(
                "load", os.path.join(FIXTURES, "dito_bundle.json"),
                "--api-url", serve.base_url, "--token", serve.admin_token)
            assert code == 0, out
            lines = out.strip().splitlines()
            assert sum(1 for line in lines if line.startswith("layout: ")) == 1
            assert sum(1 for line in lines if line.startswith("task: ")) == 1
            logins = [line for line in lines if line.startswith("login: ")]
            assert len(logins) == 4
            assert all("/chat?token=" in line and "name=" in line for line in logins)
        finally:
            await serve.terminate()

    async def test_malformed_bundle_changes_nothing(self, tmp_path):
        serve = ServeProcess(free_port(), str(tmp_path / "data"))
        await serve.start()
        try:
            bad = tmp_path / "bad_bundle.json"
            bad.write_text(json.dumps({
                "layout": {"title": "x", "scripts": {"incoming-video": "display-text"}},
                "task": {"name": "t", "num_users": 2},
            }))
            auth = {"Authorization": f"Bearer {serve.admin_token}"}
            async with httpx.AsyncClient(base_url=serve.base_url, headers=auth) as api:
                before = (await api.get("/api/v1/rooms/lobby/logs")).json()
                code, out = await run_cli("load", str(bad), "--api-url", serve.base_url,
                                          "--token", serve.admin_token)
                assert code != 0
                assert "scripts.incoming-video" in out
                # nothing was created: the next layout id is still 1
                probe = await api.get("/api/v1/layouts/1")
                assert probe.status_code == 404
                after = (await api.get("/api/v1/rooms/lobby/logs")).json()
            assert before == after
        finally:
            await serve.terminate()


class TestBotProcess:
    async def test_echo_bot_runs_as_standalone_process(self, tmp_path):
        serve = ServeProcess(free_port(), str(tmp_path / "data"))
        await serve.start()
        bot_proc = None
        try:
            auth = {"Authorization": f"Bearer {serve.admin_token}"}
            async with httpx.AsyncClient(base_url=serve.base_url, headers=auth) as api:
                await api.post("/api/v1/rooms", json={"id": "echo-room"})
                bot_token = (await api.post("/api/v1/tokens", json={
                    "permissions": ["send_text", "send_private"],
                    "login_room_id": "echo-room", "bot": True,
                })).json()["id"]
                human_token = (await api.post("/api/v1/tokens", json={
                    "permissions": ["send_text"], "login_room_id": "echo-room",
                })).json()["id"]
            bot_proc = await asyncio.create_subprocess_exec(
                sys.executable, "-u", "-m", "parley.bots.cli", "echo",
                "--token", bot_token, "--server-url", serve.base_url,
                stdout=asyncio.subprocess.DEVNULL, stderr=asyncio.subprocess.DEVNULL,
            )
            human = BotClient(serve.base_url, human_token, name="speaker")
            echoes = []
            human.on("text_message", lambda f: echoes.append(
                (f["actor"]["kind"], f["payload"]["text"])))
            await human.connect()
            deadline = asyncio.get_running_loop().time() + 20
            await human.send_text("echo-room", "are you there?")
            while ("bot", "are you there?") not in echoes:
                if asyncio.get_running_loop().time() > deadline:
                    raise AssertionError(f"no echo from bot process: {echoes}")
                await asyncio.sleep(0.05)
            await human.disconnect()
        finally:
            if bot_proc and bot_proc.returncode is None:
                bot_proc.terminate()
                await bot_proc.wait()
            await serve.terminate()


class TestTokenCommand:
    async def test_mints_token_and_prints_url(self, tmp_path):
        serve = ServeProcess(free_port(), str(tmp_path / "data"))
        await serve.start()
        try:
            code, out = await run_cli(
                "token", "--api-url", serve.base_url, "--token", serve.admin_token,
                "--permissions", "send_text,send_command", "--room", "lobby")
            assert code == 0, out
            lines = out.strip().splitlines()
            assert lines[0].startswith("token: ")
            minted = lines[0].split(": ")[1]
            assert "/chat?token=" in lines[1]
            client = BotClient(serve.base_url, minted, name="minted")
            await client.connect()
            assert (await client.send_text("lobby", "works")).ok
            await client.disconnect()
        finally:
            await serve.terminate()
