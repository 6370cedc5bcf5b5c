// Entry point: read the token from the login URL, connect, and hand the
// connection to the app. The resume key is kept in sessionStorage so a page
// reload resumes the same user instead of consuming another token use.

import { ChatApp } from "./app.js";
import { closeReason } from "./protocol.js";
import { ChatSocket } from "./socket.js";

function requireElement<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing page element: ${id}`);
  return el as T;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const token = params.get("token") ?? undefined;
  const name = params.get("name") ?? undefined;
  const resume = window.sessionStorage.getItem("parley-resume") ?? undefined;

  const banner = requireElement<HTMLElement>("banner");
  const socket = new ChatSocket(
    `${window.location.protocol}//${window.location.host}`,
    {
      token,
      name,
      resume,
      onClose: (code, reason) => {
        banner.textContent = closeReason(code) + (reason ? ` (${reason})` : "");
        banner.style.display = "";
      },
    },
  );

  const app = new ChatApp(document, socket, {
    history: requireElement("history"),
    typing: requireElement("typing-strip"),
    input: requireElement<HTMLInputElement>("chat-input"),
    send: requireElement("send-button"),
    roster: requireElement("roster"),
    display: requireElement("display-area"),
    banner,
    title: requireElement("room-title"),
  });

  try {
    const welcome = await socket.connect();
    window.sessionStorage.setItem("parley-resume", welcome.resume_key);
    requireElement("self-name").textContent = welcome.name;
  } catch (error) {
    // a stale resume key after a server reset: retry once with the raw token
    if (resume && token) {
      window.sessionStorage.removeItem("parley-resume");
      window.location.reload();
      return;
    }
    banner.textContent = String(error);
    banner.style.display = "";
  }
  void app;
}

void boot();
