// Plugin activation: only plugins named in the room layout's scripts block
// are active. The scripts map binds slot names to plugin names; this distills
// it into a feature configuration for the app.

export interface PluginConfig {
  renderMarkdown: boolean;
  showImages: boolean;
  sendMessage: boolean;
  typingUsers: boolean;
  liveTyping: boolean;
  boundingBoxes: boolean;
  mouseTracking: boolean;
}

export function activePlugins(scripts: Record<string, string>): PluginConfig {
  const values = new Set(Object.values(scripts ?? {}));
  return {
    renderMarkdown:
      scripts["incoming-text"] === "markdown" ||
      scripts["print-history"] === "markdown-history",
    showImages: scripts["incoming-image"] === "display-image",
    sendMessage: scripts["submit-message"] === "send-message",
    typingUsers: values.has("typing-users"),
    liveTyping: values.has("live-typing"),
    boundingBoxes: values.has("bounding-boxes"),
    mouseTracking: values.has("mouse-tracking"),
  };
}
