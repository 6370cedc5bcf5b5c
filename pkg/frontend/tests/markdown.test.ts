import { describe, expect, it } from "vitest";

import { renderMarkdown } from "../src/markdown.js";

describe("safe markdown subset", () => {
  it("renders bold, italic and code", () => {
    expect(renderMarkdown("**b** *i* _also i_ `c`")).toBe(
      "<strong>b</strong> <em>i</em> <em>also i</em> <code>c</code>");
  });

  it("escapes html before formatting", () => {
    expect(renderMarkdown("<script>alert(1)</script>")).toBe(
      "&lt;script&gt;alert(1)&lt;/script&gt;");
  });

  it("escapes html inside formatting", () => {
    expect(renderMarkdown("**<b>**")).toBe("<strong>&lt;b&gt;</strong>");
  });

  it("leaves plain text alone", () => {
    expect(renderMarkdown("just words")).toBe("just words");
  });
});
