// Input dispatch: "/cmd args" becomes a command event, "@name text" a private
// message, anything else a broadcast text message. The command prefix is a
// client-side convention; the wire carries structured {command, args}.

export type Dispatch =
  | { kind: "command"; command: string; args: string[] }
  | { kind: "text"; text: string; to?: number }
  | { kind: "error"; message: string };

export type NameResolver = (name: string) => number | undefined;

export function dispatchInput(raw: string, resolveName?: NameResolver): Dispatch {
  const input = raw.trim();
  if (input === "") {
    return { kind: "error", message: "nothing to send" };
  }
  if (input.startsWith("/")) {
    const tokens = input.slice(1).split(/\s+/).filter((t) => t !== "");
    if (tokens.length === 0) {
      return { kind: "error", message: "empty command" };
    }
    return { kind: "command", command: tokens[0], args: tokens.slice(1) };
  }
  if (input.startsWith("@")) {
    const space = input.indexOf(" ");
    if (space < 0) {
      return { kind: "error", message: "private message needs a text after the name" };
    }
    const name = input.slice(1, space);
    const text = input.slice(space + 1).trim();
    if (name === "" || text === "") {
      return { kind: "error", message: "private message needs a name and a text" };
    }
    const target = resolveName?.(name);
    if (target === undefined) {
      return { kind: "error", message: `no one here is called "${name}"` };
    }
    return { kind: "text", text, to: target };
  }
  return { kind: "text", text: input };
}
