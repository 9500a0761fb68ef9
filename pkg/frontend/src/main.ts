import { ApiClient } from "./api.js";
import { SessionView } from "./app.js";

function serviceUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("service") ?? "http://127.0.0.1:8000";
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const api = new ApiClient(serviceUrl());
  const view = new SessionView(root, api, document);

  const picker = document.getElementById("scenario-picker") as HTMLSelectElement;
  const startButton = document.getElementById("start-button") as HTMLButtonElement;
  startButton.addEventListener("click", () => {
    void view.start(picker.value).then(() => {
      if (view.sessionId) window.location.hash = view.sessionId;
      view.startPolling(1000);
    });
  });

  // reload restores the session from the id in the URL hash
  const existing = window.location.hash.replace("#", "");
  if (existing) {
    await view.attach(existing);
    view.startPolling(1000);
  }
}

void boot();
